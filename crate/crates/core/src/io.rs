//! File formats: JSON with 17 significant digits, measure-path JSONL, CSV
//! traces, and the provenance header every output carries.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::{SamplePath, TimeGrid};
use crate::measures::{DiscreteMeasure, MeasurePath};

/// Writes every finite float as `d.dddddddddddddddde±x`, which round-trips
/// exactly. Structure is delegated to the pretty or compact formatter.
struct SigFormatter<'a> {
    pretty: Option<PrettyFormatter<'a>>,
}

fn write_sig<W: ?Sized + Write>(w: &mut W, v: f64) -> std::io::Result<()> {
    write!(w, "{}", fmt_f64(v))
}

macro_rules! delegate {
    ($($name:ident($($arg:ident: $ty:ty),*)),* $(,)?) => {
        $(
            fn $name<W: ?Sized + Write>(&mut self, writer: &mut W $(, $arg: $ty)*) -> std::io::Result<()> {
                match &mut self.pretty {
                    Some(p) => p.$name(writer $(, $arg)*),
                    None => serde_json::ser::CompactFormatter.$name(writer $(, $arg)*),
                }
            }
        )*
    };
}

impl Formatter for SigFormatter<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()> {
        write_sig(writer, value)
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> std::io::Result<()> {
        write_sig(writer, value as f64)
    }

    delegate!(
        begin_array(),
        end_array(),
        begin_array_value(first: bool),
        end_array_value(),
        begin_object(),
        end_object(),
        begin_object_key(first: bool),
        begin_object_value(),
        end_object_value(),
    );
}

/// A float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

pub fn to_json_string<T: Serialize + ?Sized>(value: &T, pretty: bool) -> Result<String> {
    let mut buf = Vec::new();
    let fmt = SigFormatter {
        pretty: pretty.then(|| PrettyFormatter::with_indent(b"  ")),
    };
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, fmt);
    value.serialize(&mut ser)?;
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

/// Pretty JSON followed by a newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut s = to_json_string(value, true)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

/// Identifies the run that produced a file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    /// SHA-256 of the canonical JSON of the effective configuration.
    pub config_hash: String,
    pub master_seed: u64,
    pub version: String,
}

impl Provenance {
    pub fn new<C: Serialize>(config: &C, master_seed: u64) -> Result<Self> {
        let canonical = to_json_string(config, false)?;
        Ok(Self {
            config_hash: hex::encode(Sha256::digest(canonical.as_bytes())),
            master_seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
        })
    }

    fn csv_comment(&self) -> String {
        format!(
            "# provenance config_hash={} master_seed={} version={}\n",
            self.config_hash, self.master_seed, self.version
        )
    }
}

/// `{"provenance": ..., <fields of value>}` when `value` is an object,
/// otherwise `{"provenance": ..., "data": value}`.
pub fn with_provenance<T: Serialize>(prov: &Provenance, value: &T) -> Result<Value> {
    let mut out = serde_json::Map::new();
    out.insert("provenance".into(), serde_json::to_value(prov)?);
    match serde_json::to_value(value)? {
        Value::Object(m) => out.extend(m),
        other => {
            out.insert("data".into(), other);
        }
    }
    Ok(Value::Object(out))
}

#[derive(Serialize, Deserialize)]
struct NodeLine {
    t: f64,
    atoms: Vec<f64>,
    weights: Vec<f64>,
}

/// One line per node, preceded by a provenance line when given.
pub fn measure_path_jsonl(path: &MeasurePath, prov: Option<&Provenance>) -> Result<String> {
    let mut out = String::new();
    if let Some(p) = prov {
        out.push_str(&to_json_string(&serde_json::json!({ "provenance": p }), false)?);
        out.push('\n');
    }
    for (k, mu) in path.measures().iter().enumerate() {
        let line = NodeLine {
            t: path.grid().time(k),
            atoms: mu.atoms().to_vec(),
            weights: mu.weights().to_vec(),
        };
        out.push_str(&to_json_string(&line, false)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_measure_path(file: &Path, path: &MeasurePath, prov: Option<&Provenance>) -> Result<()> {
    fs::write(file, measure_path_jsonl(path, prov)?)?;
    Ok(())
}

/// Grid implied by equally spaced node times starting at zero.
fn grid_from_times(times: &[f64]) -> Result<TimeGrid> {
    if times.len() < 2 || times[0] != 0.0 {
        return Err(Error::Parse(
            "a path needs at least two nodes starting at t = 0".into(),
        ));
    }
    let grid = TimeGrid::new(times[times.len() - 1], times.len() - 1)?;
    for (k, &t) in times.iter().enumerate() {
        if (t - grid.time(k)).abs() > 1e-9 * grid.horizon().max(1.0) {
            return Err(Error::Parse(format!(
                "node times are not equally spaced: t[{k}] = {t}, expected {}",
                grid.time(k)
            )));
        }
    }
    Ok(grid)
}

/// Contents of a file holding either one measure or a measure path.
#[derive(Debug, Clone, PartialEq)]
pub enum MeasureFile {
    Measure(DiscreteMeasure),
    Path(MeasurePath),
}

fn parse_lines(text: &str) -> Result<Vec<Value>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str::<Value>(l).map_err(Error::from))
        .filter(|v| !matches!(v, Ok(Value::Object(m)) if m.contains_key("provenance") && !m.contains_key("atoms")))
        .collect()
}

pub fn parse_measure_file(text: &str) -> Result<MeasureFile> {
    if let Ok(v) = serde_json::from_str::<Value>(text) {
        if v.get("t").is_none() {
            let mu: DiscreteMeasure = serde_json::from_value(v)?;
            return Ok(MeasureFile::Measure(mu));
        }
    }
    let values = parse_lines(text)?;
    if values.len() == 1 && values[0].get("t").is_none() {
        return Ok(MeasureFile::Measure(serde_json::from_value(values[0].clone())?));
    }
    let lines = values
        .into_iter()
        .map(|v| serde_json::from_value::<NodeLine>(v).map_err(Error::from))
        .collect::<Result<Vec<_>>>()?;
    let grid = grid_from_times(&lines.iter().map(|l| l.t).collect::<Vec<_>>())?;
    let measures = lines
        .into_iter()
        .map(|l| DiscreteMeasure::normalize(l.atoms, l.weights))
        .collect::<Result<Vec<_>>>()?;
    Ok(MeasureFile::Path(MeasurePath::new(grid, measures)?))
}

pub fn read_measure_file(file: &Path) -> Result<MeasureFile> {
    parse_measure_file(&fs::read_to_string(file)?)
}

pub fn read_measure_path(file: &Path) -> Result<MeasurePath> {
    match read_measure_file(file)? {
        MeasureFile::Path(p) => Ok(p),
        MeasureFile::Measure(_) => Err(Error::Parse(format!(
            "{} holds a single measure, not a path",
            file.display()
        ))),
    }
}

/// CSV with a provenance comment line, a header and preformatted rows.
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push_floats(&mut self, row: &[f64]) {
        self.rows.push(row.iter().map(|&v| fmt_f64(v)).collect());
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn to_string(&self, prov: Option<&Provenance>) -> Result<String> {
        let mut out = Vec::new();
        if let Some(p) = prov {
            out.extend_from_slice(p.csv_comment().as_bytes());
        }
        {
            let mut w = csv::Writer::from_writer(&mut out);
            w.write_record(&self.header)?;
            for r in &self.rows {
                w.write_record(r)?;
            }
            w.flush()?;
        }
        Ok(String::from_utf8(out).expect("csv of UTF-8 strings"))
    }

    pub fn write(&self, file: &Path, prov: Option<&Provenance>) -> Result<()> {
        fs::write(file, self.to_string(prov)?)?;
        Ok(())
    }
}

/// Rows of a CSV file with `#` comment lines skipped, header included.
pub fn read_csv_rows(file: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let reader = BufReader::new(fs::File::open(file)?);
    let mut body = String::new();
    for line in reader.lines() {
        let line = line?;
        if !line.starts_with('#') {
            body.push_str(&line);
            body.push('\n');
        }
    }
    let mut rdr = csv::ReaderBuilder::new().from_reader(body.as_bytes());
    let header = rdr.headers()?.iter().map(str::to_string).collect();
    let rows = rdr
        .records()
        .map(|r| r.map(|rec| rec.iter().map(str::to_string).collect()).map_err(Error::from))
        .collect::<Result<_>>()?;
    Ok((header, rows))
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::Parse(format!("not a number: `{s}`")))
}

/// Observation path as CSV `t,y`.
pub fn y_path_table(y: &SamplePath) -> CsvTable {
    let mut t = CsvTable::new(&["t", "y"]);
    for (k, &v) in y.values().iter().enumerate() {
        t.push_floats(&[y.grid().time(k), v]);
    }
    t
}

pub fn read_y_path(file: &Path) -> Result<SamplePath> {
    let (header, rows) = read_csv_rows(file)?;
    if header.len() < 2 || header[0] != "t" || header[1] != "y" {
        return Err(Error::Parse(format!(
            "{}: expected columns `t,y`",
            file.display()
        )));
    }
    let mut times = Vec::with_capacity(rows.len());
    let mut values = Vec::with_capacity(rows.len());
    for r in &rows {
        if r.len() < 2 {
            return Err(Error::Parse("short row in observation file".into()));
        }
        times.push(parse_f64(&r[0])?);
        values.push(parse_f64(&r[1])?);
    }
    SamplePath::new(grid_from_times(&times)?, values)
}

/// Quantile levels written by [`quantile_table`].
pub const QUANTILE_LEVELS: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];

/// Per-node mean, variance and quantiles of a measure path.
pub fn quantile_table(path: &MeasurePath) -> Result<CsvTable> {
    let mut t = CsvTable::new(&["t", "mean", "variance", "q05", "q25", "q50", "q75", "q95"]);
    for (k, mu) in path.measures().iter().enumerate() {
        let mut row = vec![path.grid().time(k), mu.mean(), mu.variance()];
        for q in QUANTILE_LEVELS {
            row.push(mu.quantile(q)?);
        }
        t.push_floats(&row);
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_have_17_significant_digits() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(-2.0), "-2.0000000000000000e0");
        for v in [0.1, 1.0 / 3.0, -7.25e-300, 6.02e23, f64::MIN_POSITIVE] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(to_json_string(&vec![0.5, f64::NAN], false).unwrap(), "[5.0000000000000000e-1,null]");
    }

    #[test]
    fn pretty_json_is_valid() {
        let v = serde_json::json!({"a": [1.5, 2], "b": {"c": -0.25}});
        let s = to_json_string(&v, true).unwrap();
        assert!(s.contains('\n'));
        let back: Value = serde_json::from_str(&s).unwrap();
        assert_eq!(back["a"][0], 1.5);
        assert_eq!(back["b"]["c"], -0.25);
    }

    #[test]
    fn measure_path_round_trip() {
        let g = TimeGrid::new(0.3, 3).unwrap();
        let path = MeasurePath::new(
            g,
            (0..4)
                .map(|k| DiscreteMeasure::normalize(vec![0.1 * k as f64, 1.0 / 3.0], vec![1.0, 2.0]).unwrap())
                .collect(),
        )
        .unwrap();
        let prov = Provenance::new(&serde_json::json!({"x": 1}), 7).unwrap();
        let text = measure_path_jsonl(&path, Some(&prov)).unwrap();
        assert!(text.lines().next().unwrap().starts_with("{\"provenance\""));
        assert_eq!(text.lines().count(), 5);
        match parse_measure_file(&text).unwrap() {
            MeasureFile::Path(p) => assert_eq!(p, path),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn single_measure_files() {
        let mu = DiscreteMeasure::normalize(vec![1.0, 0.0], vec![1.0, 1.0]).unwrap();
        let compact = to_json_string(&mu, false).unwrap();
        let pretty = to_json_string(&mu, true).unwrap();
        for text in [compact, pretty] {
            assert_eq!(parse_measure_file(&text).unwrap(), MeasureFile::Measure(mu.clone()));
        }
        assert!(parse_measure_file("{not json").is_err());
        assert!(parse_measure_file(r#"{"atoms":[1],"weights":[1,2]}"#).is_err());
    }

    #[test]
    fn provenance_is_stable() {
        let a = Provenance::new(&serde_json::json!({"x": 1.0}), 1).unwrap();
        let b = Provenance::new(&serde_json::json!({"x": 1.0}), 1).unwrap();
        let c = Provenance::new(&serde_json::json!({"x": 2.0}), 1).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.config_hash, c.config_hash);
        assert_eq!(a.config_hash.len(), 64);
    }

    #[test]
    fn y_path_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = TimeGrid::new(1.0, 4).unwrap();
        let y = SamplePath::new(g, vec![0.0, 0.1, -0.2, 1.0 / 3.0, 0.5]).unwrap();
        let f = dir.path().join("y.csv");
        let prov = Provenance::new(&1, 1).unwrap();
        y_path_table(&y).write(&f, Some(&prov)).unwrap();
        assert!(fs::read_to_string(&f).unwrap().starts_with("# provenance"));
        assert_eq!(read_y_path(&f).unwrap(), y);
    }

    #[test]
    fn uneven_times_rejected() {
        assert!(grid_from_times(&[0.0, 0.1, 0.3]).is_err());
        assert!(grid_from_times(&[0.1, 0.2]).is_err());
        assert!(grid_from_times(&[0.0]).is_err());
    }

    #[test]
    fn quantile_rows() {
        let g = TimeGrid::new(1.0, 1).unwrap();
        let path = MeasurePath::constant(g, DiscreteMeasure::normalize(vec![0.0, 1.0], vec![1.0, 1.0]).unwrap());
        let t = quantile_table(&path).unwrap();
        assert_eq!(t.rows.len(), 2);
        assert_eq!(t.rows[0][5], fmt_f64(0.0));
        assert_eq!(t.rows[0][7], fmt_f64(1.0));
    }
}
