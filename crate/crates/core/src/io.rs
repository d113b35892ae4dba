//! On-disk formats shared with the command-line tool.
//!
//! Counts are stored in long format, one row per `(time, cell)` with the cell
//! geometry, next to a separate table of survey times. CSV files start with a
//! `# format_version: N` comment line; JSON documents carry a top-level
//! `format_version` field. Every write goes through a temporary file in the
//! target directory and a rename.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::ecm::CountArrangement;
use crate::error::{Error, Result};
use crate::gauss::{Interval, Rect2D};
use crate::movement::SurveyDesign;
use crate::vote::{read_districts, DistrictData};

pub const FORMAT_VERSION: u32 = 1;
const VERSION_PREFIX: &str = "# format_version:";

pub const COUNTS_HEADER: &str = "time_index,cell_index,x_lo,x_hi,y_lo,y_hi,count";
pub const TIMES_HEADER: &str = "time_index,t";

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Writes `bytes` to `path` through a temporary sibling file and a rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Checks the optional version comment on the first line of a CSV document.
fn check_csv_version(text: &str, path: &Path) -> Result<()> {
    let Some(first) = text.lines().next() else {
        return Ok(());
    };
    let Some(rest) = first.trim().strip_prefix(VERSION_PREFIX) else {
        return Ok(());
    };
    match rest.trim().parse::<u32>() {
        Ok(FORMAT_VERSION) => Ok(()),
        _ => Err(parse_error(
            path,
            1,
            format!("unsupported format version '{}', expected {FORMAT_VERSION}", rest.trim()),
        )),
    }
}

fn csv_reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes())
}

fn check_header(rdr: &mut csv::Reader<&[u8]>, expected: &str, path: &Path) -> Result<()> {
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != expected {
        let line = rdr.position().line() as usize;
        return Err(parse_error(path, line.max(1), format!("expected header {expected}, found {}", header.join(","))));
    }
    Ok(())
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, name: &str, path: &Path) -> Result<T> {
    let line = rec.position().map_or(0, |p| p.line() as usize);
    let raw = rec.get(i).ok_or_else(|| parse_error(path, line, format!("missing field {name}")))?;
    raw.parse()
        .map_err(|_| parse_error(path, line, format!("{name}: cannot parse '{raw}'")))
}

/// Long-format counts table for a design.
pub fn counts_csv(design: &SurveyDesign, counts: &CountArrangement) -> Result<String> {
    if counts.schedule().sizes() != design.cell_counts().as_slice() {
        return Err(Error::DimensionMismatch(format!(
            "counts have cells {:?} but the design has {:?}",
            counts.schedule().sizes(),
            design.cell_counts()
        )));
    }
    let mut s = format!("{VERSION_PREFIX} {FORMAT_VERSION}\n{COUNTS_HEADER}\n");
    for (k, cells) in design.cells().iter().enumerate() {
        for (l, c) in cells.iter().enumerate() {
            writeln!(
                s,
                "{k},{l},{},{},{},{},{}",
                c.x.lo(),
                c.x.hi(),
                c.y.lo(),
                c.y.hi(),
                counts.get(k, l)
            )
            .expect("writing to a String cannot fail");
        }
    }
    Ok(s)
}

/// Survey times table.
pub fn times_csv(design: &SurveyDesign) -> String {
    let mut s = format!("{VERSION_PREFIX} {FORMAT_VERSION}\n{TIMES_HEADER}\n");
    for (k, t) in design.times().iter().enumerate() {
        writeln!(s, "{k},{t}").expect("writing to a String cannot fail");
    }
    s
}

pub fn write_counts(counts_path: &Path, times_path: &Path, design: &SurveyDesign, counts: &CountArrangement) -> Result<()> {
    atomic_write(counts_path, counts_csv(design, counts)?.as_bytes())?;
    atomic_write(times_path, times_csv(design).as_bytes())
}

/// Parses a times table into survey times indexed `0..n`.
pub fn parse_times(text: &str, path: &Path) -> Result<Vec<f64>> {
    check_csv_version(text, path)?;
    let mut rdr = csv_reader(text);
    check_header(&mut rdr, TIMES_HEADER, path)?;
    let mut times = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let k: usize = field(&rec, 0, "time_index", path)?;
        let t: f64 = field(&rec, 1, "t", path)?;
        if k != times.len() {
            return Err(parse_error(path, line, format!("expected time_index {}, found {k}", times.len())));
        }
        times.push(t);
    }
    if times.is_empty() {
        return Err(parse_error(path, 1, "no survey times"));
    }
    Ok(times)
}

/// Parses a long-format counts table against survey times; returns the design and counts.
pub fn parse_counts(text: &str, path: &Path, times: Vec<f64>) -> Result<(SurveyDesign, CountArrangement)> {
    check_csv_version(text, path)?;
    let mut rdr = csv_reader(text);
    check_header(&mut rdr, COUNTS_HEADER, path)?;
    let mut rows: BTreeMap<(usize, usize), (Rect2D, u64)> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let k: usize = field(&rec, 0, "time_index", path)?;
        let l: usize = field(&rec, 1, "cell_index", path)?;
        let v: Vec<f64> = (2..6)
            .map(|i| field(&rec, i, ["x_lo", "x_hi", "y_lo", "y_hi"][i - 2], path))
            .collect::<Result<_>>()?;
        let q: u64 = field(&rec, 6, "count", path)?;
        if k >= times.len() {
            return Err(parse_error(path, line, format!("time_index {k} has no survey time")));
        }
        let iv = |lo, hi| Interval::new(lo, hi).map_err(|e| parse_error(path, line, e.to_string()));
        let rect = Rect2D::new(iv(v[0], v[1])?, iv(v[2], v[3])?);
        if rows.insert((k, l), (rect, q)).is_some() {
            return Err(parse_error(path, line, format!("duplicate cell ({k}, {l})")));
        }
    }
    let mut cells = vec![Vec::new(); times.len()];
    let mut counts = vec![Vec::new(); times.len()];
    for ((k, l), (rect, q)) in rows {
        if l != cells[k].len() {
            return Err(parse_error(path, 0, format!("time {k}: cell indices must run from 0 without gaps, missing {}", cells[k].len())));
        }
        cells[k].push(rect);
        counts[k].push(q);
    }
    let design = SurveyDesign::new(times, cells).map_err(|e| parse_error(path, 0, e.to_string()))?;
    Ok((design, CountArrangement::new(counts)?))
}

/// Reads a counts table and its times table.
pub fn read_counts(counts_path: &Path, times_path: &Path) -> Result<(SurveyDesign, CountArrangement)> {
    let times = parse_times(&std::fs::read_to_string(times_path)?, times_path)?;
    parse_counts(&std::fs::read_to_string(counts_path)?, counts_path, times)
}

/// District table in the format read by [`crate::vote::load_districts`].
pub fn districts_csv(districts: &[DistrictData]) -> Result<String> {
    let m1 = districts.first().map_or(0, |d| d.first_round.len());
    let mut s = format!("{VERSION_PREFIX} {FORMAT_VERSION}\ndistrict");
    for i in 1..=m1 {
        write!(s, ",opt_{i}").expect("writing to a String cannot fail");
    }
    s.push_str(",res_1,res_2,res_3\n");
    for d in districts {
        if d.first_round.len() != m1 {
            return Err(Error::DimensionMismatch(format!("district {} has a different option count", d.id)));
        }
        if d.id.contains([',', '"', '\n']) {
            return Err(crate::error::invalid(format!("district id '{}' needs quoting", d.id)));
        }
        s.push_str(&d.id);
        for q in d.first_round.iter().chain(&d.second_round) {
            write!(s, ",{q}").expect("writing to a String cannot fail");
        }
        s.push('\n');
    }
    Ok(s)
}

/// Reads a district table, honouring an optional version comment.
pub fn read_district_file(path: &Path) -> Result<Vec<DistrictData>> {
    let text = std::fs::read_to_string(path)?;
    check_csv_version(&text, path)?;
    read_districts(text.as_bytes(), path)
}

/// JSON document with a top-level `format_version` field.
pub fn to_versioned_json<T: Serialize>(value: &T) -> Result<String> {
    let mut v = serde_json::to_value(value)?;
    let serde_json::Value::Object(map) = &mut v else {
        return Err(crate::error::invalid("only JSON objects can carry a format version"));
    };
    map.insert("format_version".into(), FORMAT_VERSION.into());
    let mut s = serde_json::to_string_pretty(&v)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    atomic_write(path, to_versioned_json(value)?.as_bytes())
}

pub fn from_versioned_json<T: DeserializeOwned>(text: &str, path: &Path) -> Result<T> {
    let mut v: serde_json::Value = serde_json::from_str(text)?;
    let version = v
        .as_object_mut()
        .and_then(|m| m.remove("format_version"))
        .ok_or_else(|| parse_error(path, 1, "missing format_version"))?;
    if version.as_u64() != Some(FORMAT_VERSION as u64) {
        return Err(parse_error(path, 1, format!("unsupported format version {version}, expected {FORMAT_VERSION}")));
    }
    Ok(serde_json::from_value(v)?)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    from_versioned_json(&std::fs::read_to_string(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::FitResult;
    use crate::simulate::{generate_design, stream_rng, DesignSpec};

    fn sample() -> (SurveyDesign, CountArrangement) {
        let design = SurveyDesign::new(
            vec![0.0, 1.5],
            vec![
                vec![
                    Rect2D::square(0.0, 0.0, 0.1).unwrap(),
                    Rect2D::new(Interval::new(0.5, f64::INFINITY).unwrap(), Interval::full()),
                ],
                vec![Rect2D::square(-0.3, 0.2, 0.05).unwrap()],
            ],
        )
        .unwrap();
        (design, CountArrangement::new(vec![vec![3, 0], vec![7]]).unwrap())
    }

    #[test]
    fn counts_round_trip_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let (c, t) = (dir.path().join("counts.csv"), dir.path().join("times.csv"));
        let (design, counts) = sample();
        write_counts(&c, &t, &design, &counts).unwrap();
        let text = std::fs::read_to_string(&c).unwrap();
        assert!(text.starts_with("# format_version: 1\n"));
        assert_eq!(read_counts(&c, &t).unwrap(), (design, counts));
    }

    #[test]
    fn generated_design_round_trips_exactly() {
        let design = generate_design(&DesignSpec::standard(), &mut stream_rng(1, 0)).unwrap();
        let counts = CountArrangement::zeros(&crate::ecm::CategorySchedule::new(design.cell_counts()).unwrap());
        let p = Path::new("x");
        let times = parse_times(&times_csv(&design), p).unwrap();
        let (d2, _) = parse_counts(&counts_csv(&design, &counts).unwrap(), p, times).unwrap();
        assert_eq!(d2, design);
    }

    #[test]
    fn rejects_bad_counts() {
        let p = Path::new("counts.csv");
        let times = || vec![0.0, 1.0];
        let gap = "time_index,cell_index,x_lo,x_hi,y_lo,y_hi,count\n0,1,0,1,0,1,4\n";
        assert!(parse_counts(gap, p, times()).is_err());
        let dup = "time_index,cell_index,x_lo,x_hi,y_lo,y_hi,count\n0,0,0,1,0,1,4\n0,0,0,1,0,1,4\n";
        assert!(matches!(parse_counts(dup, p, times()), Err(Error::Parse { line: 3, .. })));
        let neg = "time_index,cell_index,x_lo,x_hi,y_lo,y_hi,count\n0,0,0,1,0,1,-4\n";
        assert!(matches!(parse_counts(neg, p, times()), Err(Error::Parse { line: 2, .. })));
        let overlap = "time_index,cell_index,x_lo,x_hi,y_lo,y_hi,count\n0,0,0,1,0,1,4\n0,1,0.5,2,0.5,2,1\n";
        assert!(parse_counts(overlap, p, times()).is_err());
        let late = "time_index,cell_index,x_lo,x_hi,y_lo,y_hi,count\n2,0,0,1,0,1,4\n";
        assert!(parse_counts(late, p, times()).is_err());
        let version = "# format_version: 2\ntime_index,t\n0,0\n";
        assert!(parse_times(version, p).is_err());
        assert!(parse_times("time_index,t\n1,0\n", p).is_err());
    }

    #[test]
    fn every_time_needs_a_cell() {
        let text = "time_index,cell_index,x_lo,x_hi,y_lo,y_hi,count\n1,0,0,1,0,1,2\n";
        assert!(parse_counts(text, Path::new("x"), vec![0.0, 1.0]).is_err());
    }

    #[test]
    fn districts_round_trip() {
        let ds = vec![
            DistrictData::new("a", vec![5, 5], [3, 3, 4]).unwrap(),
            DistrictData::new("b", vec![1, 0], [0, 0, 1]).unwrap(),
        ];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        atomic_write(&p, districts_csv(&ds).unwrap().as_bytes()).unwrap();
        assert_eq!(read_district_file(&p).unwrap(), ds);
    }

    #[test]
    fn json_carries_version_and_nan() {
        let fit = FitResult {
            names: vec!["a".into()],
            transformed: vec![1.0],
            natural: vec![1.0],
            objective: 2.0,
            hessian: vec![vec![f64::NAN]],
            min_hessian_eigenvalue: f64::NAN,
            erratic: true,
            start_index: 0,
            iterations: 3,
            evaluations: 9,
            at_bound: vec![false],
            local_optima: vec![],
        };
        let s = to_versioned_json(&fit).unwrap();
        assert!(s.contains("\"format_version\": 1"));
        let back: FitResult = from_versioned_json(&s, Path::new("f.json")).unwrap();
        assert!(back.min_hessian_eigenvalue.is_nan() && back.erratic);
        assert!(from_versioned_json::<FitResult>(&s.replace("\"format_version\": 1", "\"format_version\": 7"), Path::new("f")).is_err());
    }
}
