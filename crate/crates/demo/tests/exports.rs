use kronband_demo::{mask_weights_json, simulate_and_fit_json, tuning_grid_json};
use serde_json::Value;

fn parse(s: String) -> Value {
    serde_json::from_str(&s).unwrap()
}

#[test]
fn taper_weights_match_the_definition() {
    let v = parse(mask_weights_json("taper", 4, 6).unwrap());
    let w = &v["weights"];
    assert_eq!(w[0][0], 1.0);
    assert_eq!(w[0][2], 1.0);
    assert_eq!(w[0][3], 0.5);
    assert_eq!(w[0][4], 0.0);
    assert!(mask_weights_json("band", 6, 6).is_err());
    assert!(mask_weights_json("bogus", 1, 6).is_err());
}

#[test]
fn fit_returns_factors_and_error() {
    let v = parse(simulate_and_fit_json(60, 5, 6, "ar1", 0.5, "band", 2, 2, 3).unwrap());
    assert_eq!(v["sigma1"].as_array().unwrap().len(), 5);
    assert_eq!(v["truth2"].as_array().unwrap().len(), 6);
    assert!(v["error"].as_f64().unwrap() > 0.0);
    assert!(simulate_and_fit_json(60, 50, 6, "ar1", 0.5, "band", 1, 1, 3).is_err());
    assert!(simulate_and_fit_json(60, 5, 6, "ar1", 0.5, "robust-band", 1, 1, 3).is_err());
}

#[test]
fn grid_has_one_score_per_pair() {
    let v = parse(tuning_grid_json(30, 4, 5, "ma1", 0.5, "taper", 2, 1).unwrap());
    let (g1, g2) = (v["grid1"].as_array().unwrap().len(), v["grid2"].as_array().unwrap().len());
    assert_eq!((g1, g2), (3, 3));
    assert_eq!(v["scores"].as_array().unwrap().len(), g1 * g2);
}
