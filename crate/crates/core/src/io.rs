//! File formats shared by the CLI and the demo: JSON problem documents, PGM
//! images and the fixed float formatting used in CSV and JSON reports.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rdp::DistortionMatrix;
use crate::semsrc::{DiscreteDistribution, SynonymousPartition};
use crate::transform::Image;

/// Significant digits of every float written to a report.
pub const REPORT_DIGITS: usize = 9;

/// `%.9g`-style formatting: shortest of fixed or exponent notation, trailing
/// zeros removed; `inf`, `-inf` and `nan` for non-finite values.
pub fn fmt_float(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf" } else { "-inf" }.into();
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.*e}", REPORT_DIGITS - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent notation");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -5 || exp >= REPORT_DIGITS as i32 {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{m}e{sign}{:02}", exp.abs());
    }
    let decimals = (REPORT_DIGITS as i32 - 1 - exp).max(0) as usize;
    trim_zeros(&format!("{x:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// JSON numbers cannot carry infinities; those become the strings above.
pub fn report_value(x: f64) -> serde_json::Value {
    let text = fmt_float(x);
    match text.parse::<serde_json::Number>() {
        Ok(n) if x.is_finite() => serde_json::Value::Number(n),
        _ => serde_json::Value::String(text),
    }
}

/// Partition as a list of index groups; the alphabet size comes from context.
pub fn parse_partition(text: &str, alphabet_len: usize) -> Result<SynonymousPartition> {
    let groups: Vec<Vec<usize>> = serde_json::from_str(text)?;
    SynonymousPartition::new(groups, alphabet_len)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemDoc {
    source: DiscreteDistribution,
    distortion: DistortionMatrix,
    #[serde(default)]
    partition: Option<Vec<Vec<usize>>>,
}

/// Source, distortion and reconstruction partition (singletons if absent).
#[derive(Debug, Clone)]
pub struct Problem {
    pub source: DiscreteDistribution,
    pub distortion: DistortionMatrix,
    pub partition: SynonymousPartition,
}

impl Problem {
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ProblemDoc = serde_json::from_str(text)?;
        let n = doc.distortion.cols();
        let partition = match doc.partition {
            Some(groups) => SynonymousPartition::new(groups, n)?,
            None => SynonymousPartition::singletons(n),
        };
        Ok(Self {
            source: doc.source,
            distortion: doc.distortion,
            partition,
        })
    }
}

/// One multiplier setting of a sweep. The classical solver reads
/// `lambda_d` as its slope and ignores `lambda_p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepPoint {
    pub lambda_d: f64,
    #[serde(default)]
    pub lambda_p: f64,
}

pub fn parse_sweep(text: &str) -> Result<Vec<SweepPoint>> {
    let points: Vec<SweepPoint> = serde_json::from_str(text)?;
    if points.is_empty() {
        return Err(Error::InvalidConfig("sweep has no points".into()));
    }
    for p in &points {
        if !(p.lambda_d.is_finite() && p.lambda_d >= 0.0 && p.lambda_p.is_finite() && p.lambda_p >= 0.0)
        {
            return Err(Error::InvalidConfig(format!(
                "multipliers must be finite and >= 0: {p:?}"
            )));
        }
    }
    Ok(points)
}

fn pgm_token<'a>(data: &'a [u8], at: &mut usize) -> Result<&'a [u8]> {
    loop {
        while *at < data.len() && data[*at].is_ascii_whitespace() {
            *at += 1;
        }
        if *at < data.len() && data[*at] == b'#' {
            while *at < data.len() && data[*at] != b'\n' {
                *at += 1;
            }
            continue;
        }
        break;
    }
    let start = *at;
    while *at < data.len() && !data[*at].is_ascii_whitespace() {
        *at += 1;
    }
    if start == *at {
        return Err(Error::Format("PGM header ends early".into()));
    }
    Ok(&data[start..*at])
}

fn pgm_number(data: &[u8], at: &mut usize) -> Result<usize> {
    let tok = pgm_token(data, at)?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format(format!("bad PGM header field {:?}", String::from_utf8_lossy(tok))))
}

/// Binary PGM (`P5`) with maxval 255.
pub fn read_pgm(data: &[u8]) -> Result<Image> {
    let mut at = 0;
    if pgm_token(data, &mut at)? != b"P5" {
        return Err(Error::Format("not a binary PGM (P5) file".into()));
    }
    let width = pgm_number(data, &mut at)?;
    let height = pgm_number(data, &mut at)?;
    let maxval = pgm_number(data, &mut at)?;
    if maxval != 255 {
        return Err(Error::Format(format!("only 8-bit PGM is supported, maxval {maxval}")));
    }
    // exactly one whitespace byte before the raster
    at += 1;
    let n = width * height;
    if data.len() < at + n {
        return Err(Error::Format("PGM raster is truncated".into()));
    }
    Image::new(width, height, data[at..at + n].to_vec())
        .map_err(|e| Error::Format(e.to_string()))
}

pub fn write_pgm(img: &Image) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.pixels());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format() {
        assert_eq!(fmt_float(0.0), "0");
        assert_eq!(fmt_float(1.0), "1");
        assert_eq!(fmt_float(0.5), "0.5");
        assert_eq!(fmt_float(1.0 / 3.0), "0.333333333");
        assert_eq!(fmt_float(2.0 / 3.0 * 1e-7), "6.66666667e-08");
        assert_eq!(fmt_float(123456789.0), "123456789");
        assert_eq!(fmt_float(1234567891.0), "1.23456789e+09");
        assert_eq!(fmt_float(-0.0001), "-0.0001");
        assert_eq!(fmt_float(f64::INFINITY), "inf");
        assert_eq!(fmt_float(48.1308036), "48.1308036");
        assert_eq!(fmt_float(99.9999999996), "100");
    }

    #[test]
    fn pgm_roundtrip() {
        let img = Image::from_fn(5, 3, |x, y| (x * 40 + y) as u8);
        assert_eq!(read_pgm(&write_pgm(&img)).unwrap(), img);
        let commented = b"P5\n# hi\n2 1\n255\n\x01\x02";
        assert_eq!(read_pgm(commented).unwrap().pixels(), &[1, 2]);
        assert!(read_pgm(b"P2\n1 1\n255\n0").is_err());
        assert!(read_pgm(b"P5\n4 4\n255\n\x00").is_err());
        assert!(read_pgm(b"P5\n1 1\n65535\n\x00\x00").is_err());
    }

    #[test]
    fn problem_document() {
        let p = Problem::from_json(
            r#"{"source":[0.5,0.5],"distortion":[[0,1],[1,0]],"partition":[[0,1]]}"#,
        )
        .unwrap();
        assert_eq!(p.partition.num_groups(), 1);
        let q = Problem::from_json(r#"{"source":[0.5,0.5],"distortion":[[0,1],[1,0]]}"#).unwrap();
        assert!(q.partition.is_singleton());
        assert!(Problem::from_json(r#"{"source":[0.5,0.6],"distortion":[[0,1],[1,0]]}"#).is_err());
        assert!(parse_sweep("[]").is_err());
        assert_eq!(parse_sweep(r#"[{"lambda_d":2}]"#).unwrap()[0].lambda_p, 0.0);
    }
}
