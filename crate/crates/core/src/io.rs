//! Dataset files.
//!
//! Binary container: the magic bytes `KCOV1\0`, then `n`, `p`, `q` as
//! little-endian `u64`, then `n·p·q` little-endian `f64` values, sample by
//! sample, each sample in column-major order.
//!
//! CSV interchange: a header line `# n=<n> p=<p> q=<q>` followed by one row
//! per sample holding its `pq` entries in `vec` order.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::{Mat, MatrixDataset};

pub const MAGIC: &[u8; 6] = b"KCOV1\0";

pub fn write_binary<W: Write>(ds: &MatrixDataset, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    for x in [ds.n(), ds.p(), ds.q()] {
        w.write_all(&(x as u64).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(ds.data().len() * 8);
    for x in ds.data() {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_binary<R: Read>(mut r: R) -> Result<MatrixDataset> {
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic).map_err(|_| Error::Format("file is too short for a header".into()))?;
    if &magic != MAGIC {
        return Err(Error::Format("bad magic bytes (expected KCOV1)".into()));
    }
    let mut dims = [0usize; 3];
    for d in &mut dims {
        let mut b = [0u8; 8];
        r.read_exact(&mut b).map_err(|_| Error::Format("truncated header".into()))?;
        *d = usize::try_from(u64::from_le_bytes(b)).map_err(|_| Error::Format("dimension overflows usize".into()))?;
    }
    let [n, p, q] = dims;
    let count = n
        .checked_mul(p)
        .and_then(|x| x.checked_mul(q))
        .ok_or_else(|| Error::Format("n·p·q overflows".into()))?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != count * 8 {
        return Err(Error::Format(format!("expected {} data bytes, found {}", count * 8, bytes.len())));
    }
    if n == 0 {
        return Err(Error::Format("dataset has no samples".into()));
    }
    let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect();
    MatrixDataset::new(p, q, data)
}

pub fn write_csv<W: Write>(ds: &MatrixDataset, mut w: W) -> Result<()> {
    writeln!(w, "# n={} p={} q={}", ds.n(), ds.p(), ds.q())?;
    for i in 0..ds.n() {
        let row: Vec<String> = ds.sample_vec(i).iter().map(|x| format!("{x:?}")).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn read_csv<R: Read>(r: R) -> Result<MatrixDataset> {
    let mut lines = BufReader::new(r).lines();
    let header = lines.next().ok_or_else(|| Error::Format("empty file".into()))??;
    let (n, p, q) = parse_header(&header)?;
    let mut data = Vec::with_capacity(n * p * q);
    let mut rows = 0;
    for (idx, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let before = data.len();
        for field in line.split(',') {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("line {}: `{}` is not a number", idx + 2, field.trim())))?;
            data.push(v);
        }
        if data.len() - before != p * q {
            return Err(Error::Format(format!("line {}: expected {} values, found {}", idx + 2, p * q, data.len() - before)));
        }
        rows += 1;
    }
    if rows != n {
        return Err(Error::Format(format!("header declares n={n} but found {rows} rows")));
    }
    MatrixDataset::new(p, q, data)
}

fn parse_header(line: &str) -> Result<(usize, usize, usize)> {
    let body = line
        .trim()
        .strip_prefix('#')
        .ok_or_else(|| Error::Format("missing `# n=.. p=.. q=..` header".into()))?;
    let mut vals = [None; 3];
    for tok in body.split_whitespace() {
        let (k, v) = tok.split_once('=').ok_or_else(|| Error::Format(format!("bad header token `{tok}`")))?;
        let slot = match k {
            "n" => 0,
            "p" => 1,
            "q" => 2,
            _ => return Err(Error::Format(format!("unknown header key `{k}`"))),
        };
        vals[slot] = Some(v.parse::<usize>().map_err(|_| Error::Format(format!("bad header value `{tok}`")))?);
    }
    match vals {
        [Some(n), Some(p), Some(q)] if n > 0 && p > 0 && q > 0 => Ok((n, p, q)),
        _ => Err(Error::Format("header must give positive n, p and q".into())),
    }
}

/// Reads either format, chosen by the leading bytes.
pub fn read_dataset(path: &Path) -> Result<MatrixDataset> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(MAGIC) {
        read_binary(bytes.as_slice())
    } else {
        read_csv(bytes.as_slice())
    }
}

/// Writes CSV when the extension is `.csv`, the binary container otherwise.
pub fn write_dataset(ds: &MatrixDataset, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        write_csv(ds, &mut buf)?;
    } else {
        write_binary(ds, &mut buf)?;
    }
    fs::write(path, buf)?;
    Ok(())
}

/// A plain matrix as comma separated rows.
pub fn matrix_to_csv(m: &Mat) -> String {
    let mut out = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = m.row(i).iter().map(|x| format!("{x:?}")).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn matrix_from_csv(text: &str) -> Result<Mat> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#')) {
        let row = line
            .split(',')
            .map(|f| f.trim().parse::<f64>().map_err(|_| Error::Format(format!("line {}: `{}` is not a number", i + 1, f.trim()))))
            .collect::<Result<Vec<_>>>()?;
        if rows.first().is_some_and(|r| r.len() != row.len()) {
            return Err(Error::Format(format!("line {}: ragged row", i + 1)));
        }
        rows.push(row);
    }
    let (r, c) = (rows.len(), rows.first().map_or(0, Vec::len));
    Ok(Mat::from_fn(r, c, |i, j| rows[i][j]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> MatrixDataset {
        MatrixDataset::new(2, 3, (0..12).map(|i| i as f64 * 0.1 - 0.35).collect()).unwrap()
    }

    #[test]
    fn binary_round_trip() {
        let ds = sample();
        let mut buf = Vec::new();
        write_binary(&ds, &mut buf).unwrap();
        assert_eq!(&buf[..6], MAGIC);
        assert_eq!(buf.len(), 6 + 24 + 12 * 8);
        assert_eq!(read_binary(buf.as_slice()).unwrap(), ds);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let ds = sample();
        let mut buf = Vec::new();
        write_csv(&ds, &mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("# n=2 p=2 q=3\n"));
        assert_eq!(read_csv(buf.as_slice()).unwrap(), ds);
    }

    #[test]
    fn malformed_inputs() {
        assert!(read_binary(&b"KCOV2\0"[..]).is_err());
        let mut buf = Vec::new();
        write_binary(&sample(), &mut buf).unwrap();
        buf.pop();
        assert!(matches!(read_binary(buf.as_slice()), Err(Error::Format(_))));
        assert!(read_csv(&b"# n=1 p=1 q=2\n1.0\n"[..]).is_err());
        assert!(read_csv(&b"# n=2 p=1 q=1\n1.0\n"[..]).is_err());
        assert!(read_csv(&b"n=1 p=1 q=1\n1.0\n"[..]).is_err());
        assert!(read_csv(&b"# n=1 p=1 q=1\nNaN\n"[..]).is_err());
    }

    #[test]
    fn matrix_csv_round_trip() {
        let m = Mat::from_fn(3, 2, |i, j| i as f64 - 0.5 * j as f64);
        assert_eq!(matrix_from_csv(&matrix_to_csv(&m)).unwrap(), m);
    }
}
