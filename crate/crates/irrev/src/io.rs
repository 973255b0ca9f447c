//! Model files, trajectory files and report serialization.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use irrev_core::model::{Alphabet, MarkovModel, Trajectory};
use serde::Serialize;
use serde_json::Value;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File { path: String, source: io::Error },
    #[error("model file: {0}")]
    Model(String),
    #[error("trajectory file, line {line}, column {column}: {message}")]
    Token {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("trajectory file is empty")]
    Empty,
    #[error(transparent)]
    Core(#[from] irrev_core::Error),
    #[error("serialization: {0}")]
    Serialize(String),
}

pub type IoResult<T> = Result<T, IoError>;

fn read(path: &Path) -> IoResult<String> {
    fs::read_to_string(path).map_err(|source| IoError::File {
        path: path.display().to_string(),
        source,
    })
}

fn write_file(path: &Path, contents: &[u8]) -> IoResult<()> {
    fs::write(path, contents).map_err(|source| IoError::File {
        path: path.display().to_string(),
        source,
    })
}

fn probability(v: &Value, at: &str) -> IoResult<f64> {
    let p = match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse::<f64>().ok(),
        _ => None,
    };
    p.filter(|p| p.is_finite())
        .ok_or_else(|| IoError::Model(format!("{at}: probability {v} is not a decimal number")))
}

/// Parses `{alphabet: [tokens], order: r, transitions: {state: {token: prob}}}`.
pub fn parse_model(text: &str) -> IoResult<MarkovModel> {
    let root: Value = serde_json::from_str(text).map_err(|e| IoError::Model(e.to_string()))?;
    let tokens: Vec<String> = root
        .get("alphabet")
        .and_then(Value::as_array)
        .ok_or_else(|| IoError::Model("missing array `alphabet`".into()))?
        .iter()
        .map(|t| {
            t.as_str()
                .map(str::to_owned)
                .ok_or_else(|| IoError::Model(format!("alphabet entry {t} is not a string")))
        })
        .collect::<IoResult<_>>()?;
    let alphabet = Alphabet::new(tokens)?;
    let order = root
        .get("order")
        .and_then(Value::as_u64)
        .ok_or_else(|| IoError::Model("missing integer `order`".into()))? as usize;
    let rows = root
        .get("transitions")
        .and_then(Value::as_object)
        .ok_or_else(|| IoError::Model("missing object `transitions`".into()))?;
    let m = alphabet.len();
    let states = m
        .checked_pow(order as u32)
        .filter(|&s| s <= irrev_core::model::MAX_STATES && order >= 1)
        .ok_or_else(|| IoError::Model(format!("order {order} is not supported for {m} symbols")))?;
    let mut table = vec![f64::NAN; states * m];
    for (key, row) in rows {
        let block = alphabet
            .parse_block(key)
            .map_err(|e| IoError::Model(format!("state {key:?}: {e}")))?;
        if block.len() != order {
            return Err(IoError::Model(format!("state {key:?} does not have {order} symbols")));
        }
        let u = block.iter().fold(0usize, |acc, &s| acc * m + s as usize);
        if !table[u * m].is_nan() {
            return Err(IoError::Model(format!("state {key:?} listed twice")));
        }
        let row = row
            .as_object()
            .ok_or_else(|| IoError::Model(format!("state {key:?}: row is not an object")))?;
        let mut filled = vec![f64::NAN; m];
        for (tok, p) in row {
            let b = alphabet
                .index(tok)
                .ok_or_else(|| IoError::Model(format!("state {key:?}: unknown symbol {tok:?}")))?;
            filled[b as usize] = probability(p, key)?;
        }
        if let Some(b) = filled.iter().position(|p| p.is_nan()) {
            return Err(IoError::Model(format!(
                "state {key:?}: no probability for symbol {:?}",
                alphabet.symbol(b as u8)
            )));
        }
        table[u * m..u * m + m].copy_from_slice(&filled);
    }
    if let Some(u) = (0..states).find(|&u| table[u * m].is_nan()) {
        let key = alphabet.render(&state_symbols(u, m, order));
        return Err(IoError::Model(format!("missing row for state {key:?}")));
    }
    Ok(MarkovModel::new(alphabet, order, table)?)
}

fn state_symbols(mut u: usize, m: usize, order: usize) -> Vec<u8> {
    let mut out = vec![0u8; order];
    for slot in out.iter_mut().rev() {
        *slot = (u % m) as u8;
        u /= m;
    }
    out
}

pub fn load_model(path: &Path) -> IoResult<MarkovModel> {
    parse_model(&read(path)?)
}

/// Model JSON with probabilities written to 17 significant digits.
pub fn model_to_json(model: &MarkovModel) -> IoResult<String> {
    let alphabet = model.alphabet();
    let m = alphabet.len();
    let mut transitions = BTreeMap::new();
    for u in 0..model.num_states() {
        let row: BTreeMap<String, f64> = (0..m as u8)
            .map(|b| (alphabet.symbol(b).to_owned(), model.transition(u, b)))
            .collect();
        transitions.insert(alphabet.render(&model.state_symbols(u)), row);
    }
    #[derive(Serialize)]
    struct File<'a> {
        alphabet: &'a [String],
        order: usize,
        transitions: BTreeMap<String, BTreeMap<String, f64>>,
    }
    to_json(&File {
        alphabet: alphabet.symbols(),
        order: model.order(),
        transitions,
    })
}

/// Reads a trajectory. Single-character alphabets use the compact format
/// (every non-whitespace character is a symbol, any line layout); otherwise
/// each non-blank line holds one token.
pub fn parse_trajectory(text: &str, alphabet: &Alphabet) -> IoResult<Trajectory> {
    let mut symbols = Vec::new();
    let compact = alphabet.is_single_char();
    for (li, line) in text.lines().enumerate() {
        if compact {
            let mut buf = [0u8; 4];
            for (ci, c) in line.chars().enumerate() {
                if c.is_whitespace() {
                    continue;
                }
                let s = alphabet.index(c.encode_utf8(&mut buf)).ok_or_else(|| IoError::Token {
                    line: li + 1,
                    column: ci + 1,
                    message: format!("unknown symbol {c:?}"),
                })?;
                symbols.push(s);
            }
        } else {
            let token = line.trim();
            if token.is_empty() {
                continue;
            }
            let s = alphabet.index(token).ok_or_else(|| IoError::Token {
                line: li + 1,
                column: line.find(token).unwrap_or(0) + 1,
                message: format!("unknown token {token:?}"),
            })?;
            symbols.push(s);
        }
    }
    if symbols.is_empty() {
        return Err(IoError::Empty);
    }
    Ok(Trajectory::from_symbols(symbols))
}

pub fn ingest_trajectory(path: &Path, alphabet: &Alphabet) -> IoResult<Trajectory> {
    parse_trajectory(&read(path)?, alphabet)
}

pub fn trajectory_to_string(symbols: &[u8], alphabet: &Alphabet) -> String {
    let mut out = String::with_capacity(symbols.len() + 1);
    if alphabet.is_single_char() {
        for &s in symbols {
            out.push_str(alphabet.symbol(s));
        }
        out.push('\n');
    } else {
        for &s in symbols {
            out.push_str(alphabet.symbol(s));
            out.push('\n');
        }
    }
    out
}

pub fn write_trajectory(path: &Path, symbols: &[u8], alphabet: &Alphabet) -> IoResult<()> {
    write_file(path, trajectory_to_string(symbols, alphabet).as_bytes())
}

/// Writes finite floats with 17 significant digits, which round-trips every
/// `f64`. Non-finite values are emitted as `null` by the serializer.
struct ExactFloats;

impl serde_json::ser::Formatter for ExactFloats {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        writer.write_all(format_f64(value).as_bytes())
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }
}

/// `{:.16e}`; non-finite values as `NaN`, `inf`, `-inf`.
pub fn format_f64(value: f64) -> String {
    if value.is_finite() {
        format!("{value:.16e}")
    } else {
        value.to_string()
    }
}

pub fn to_json<T: Serialize + ?Sized>(value: &T) -> IoResult<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, ExactFloats);
    value
        .serialize(&mut ser)
        .map_err(|e| IoError::Serialize(e.to_string()))?;
    String::from_utf8(buf).map_err(|e| IoError::Serialize(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, serde::Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    #[default]
    Json,
}

/// A report that can be written as one JSON object or as CSV rows.
pub trait Tabular: Serialize {
    fn csv_header(&self) -> Vec<String>;
    fn csv_rows(&self) -> Vec<Vec<String>>;
}

pub fn render_csv(header: &[String], rows: &[Vec<String>]) -> IoResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(|e| IoError::Serialize(e.to_string()))?;
    for row in rows {
        w.write_record(row).map_err(|e| IoError::Serialize(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| IoError::Serialize(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| IoError::Serialize(e.to_string()))
}

pub fn render_report<T: Tabular>(report: &T, format: Format) -> IoResult<String> {
    match format {
        Format::Json => {
            let mut s = to_json(report)?;
            s.push('\n');
            Ok(s)
        }
        Format::Csv => render_csv(&report.csv_header(), &report.csv_rows()),
    }
}

/// Writes the rendered report to `path`, or to stdout when `path` is `None`.
pub fn emit_report<T: Tabular>(report: &T, format: Format, path: Option<&Path>) -> IoResult<()> {
    let text = render_report(report, format)?;
    match path {
        Some(p) => write_file(p, text.as_bytes()),
        None => {
            let mut out = io::stdout().lock();
            out.write_all(text.as_bytes()).map_err(|source| IoError::File {
                path: "<stdout>".into(),
                source,
            })
        }
    }
}

/// Convenience for CSV cells.
pub fn cell(value: f64) -> String {
    format_f64(value)
}

pub fn optional_cell(value: Option<f64>) -> String {
    value.map(format_f64).unwrap_or_default()
}

/// `key=value` pairs, sorted, for provenance echoes.
pub fn describe(settings: &BTreeMap<String, String>) -> String {
    let mut s = String::new();
    for (k, v) in settings {
        let _ = write!(s, "{k}={v};");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const CYCLIC: &str = r#"{
        "alphabet": ["a", "b", "c"],
        "order": 1,
        "transitions": {
            "a": {"a": 0.25, "b": 0.5, "c": 0.25},
            "b": {"a": 0.25, "b": "0.25", "c": 0.5},
            "c": {"a": 0.5, "b": 0.25, "c": 0.25}
        }
    }"#;

    #[test]
    fn parses_model_with_string_probabilities() {
        let m = parse_model(CYCLIC).unwrap();
        assert_eq!(m.alphabet_size(), 3);
        assert_eq!(m.transition(1, 2), 0.5);
        assert_eq!(m, irrev_core::MarkovModel::new(m.alphabet().clone(), 1, m.transitions().to_vec()).unwrap());
    }

    #[test]
    fn model_round_trips_through_json() {
        let m = parse_model(CYCLIC).unwrap();
        let again = parse_model(&model_to_json(&m).unwrap()).unwrap();
        assert_eq!(m, again);
        assert_eq!(m.model_id(), again.model_id());
    }

    #[test]
    fn model_errors_are_reported() {
        let bad_row = CYCLIC.replace("\"c\": 0.5}", "\"c\": 0.6}");
        assert!(matches!(parse_model(&bad_row), Err(IoError::Core(_))));
        let missing = r#"{"alphabet":["a","b"],"order":1,"transitions":{"a":{"a":0.5,"b":0.5}}}"#;
        let err = parse_model(missing).unwrap_err().to_string();
        assert!(err.contains("missing row"), "{err}");
        let text = r#"{"alphabet":["a","b"],"order":1,"transitions":{"a":{"a":"x","b":0.5},"b":{"a":0.5,"b":0.5}}}"#;
        assert!(parse_model(text).is_err());
    }

    #[test]
    fn higher_order_keys_and_multichar_tokens() {
        let text = r#"{"alphabet":["up","down"],"order":2,"transitions":{
            "up,up":{"up":0.3,"down":0.7},"up,down":{"up":0.6,"down":0.4},
            "down,up":{"up":0.5,"down":0.5},"down,down":{"up":0.2,"down":0.8}}}"#;
        let m = parse_model(text).unwrap();
        assert_eq!(m.transition(0b01, 0), 0.6);
        assert_eq!(parse_model(&model_to_json(&m).unwrap()).unwrap(), m);
    }

    #[test]
    fn trajectory_one_token_per_line() {
        let a = Alphabet::new(["a", "b"]).unwrap();
        assert_eq!(parse_trajectory("a\nb\na\n", &a).unwrap().symbols, vec![0, 1, 0]);
        let multi = Alphabet::new(["up", "down"]).unwrap();
        assert_eq!(parse_trajectory("up\n\ndown\n", &multi).unwrap().symbols, vec![0, 1]);
    }

    #[test]
    fn unknown_token_names_its_line() {
        let a = Alphabet::new(["a", "b"]).unwrap();
        match parse_trajectory("a\nb\nz\n", &a) {
            Err(IoError::Token { line, column, .. }) => assert_eq!((line, column), (3, 1)),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_trajectory("\n\n", &a), Err(IoError::Empty)));
    }

    #[test]
    fn floats_keep_seventeen_digits() {
        let v = core::f64::consts::PI / 7.0;
        let s = to_json(&v).unwrap();
        assert_eq!(s.parse::<f64>().unwrap(), v);
        assert_eq!(to_json(&f64::NAN).unwrap(), "null");
        assert_eq!(format_f64(0.1), "1.0000000000000001e-1");
    }
}
