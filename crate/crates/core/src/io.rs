//! File formats: AIS CSV, ports JSON and schema-versioned JSONL.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::annotate::{AisMessage, PortRecord};
use crate::error::{Error, Result};
use crate::geo::GeoPoint;

/// One CSV row; column names follow the AIS field names.
#[derive(Debug, Serialize, Deserialize)]
struct AisRow {
    vessel_id: String,
    timestamp: i64,
    lon: f64,
    lat: f64,
    sog: Option<f64>,
    rot: Option<f64>,
    cog: Option<f64>,
    heading: Option<f64>,
    draught: Option<f64>,
    eta: Option<i64>,
    ship_type: usize,
    destination: String,
}

impl From<&AisMessage> for AisRow {
    fn from(m: &AisMessage) -> Self {
        AisRow {
            vessel_id: m.vessel_id.clone(),
            timestamp: m.timestamp,
            lon: m.pos.lon,
            lat: m.pos.lat,
            sog: m.sog,
            rot: m.rot,
            cog: m.cog,
            heading: m.heading,
            draught: m.draught,
            eta: m.eta,
            ship_type: m.ship_type,
            destination: m.destination.clone(),
        }
    }
}

impl From<AisRow> for AisMessage {
    fn from(r: AisRow) -> Self {
        AisMessage {
            vessel_id: r.vessel_id,
            timestamp: r.timestamp,
            eta: r.eta,
            // range checks happen in sentinel filtering, not at parse time
            pos: GeoPoint { lon: r.lon, lat: r.lat },
            sog: r.sog,
            rot: r.rot,
            cog: r.cog,
            heading: r.heading,
            draught: r.draught,
            ship_type: r.ship_type,
            destination: r.destination,
        }
    }
}

fn file_name(path: &Path) -> String {
    path.display().to_string()
}

pub fn write_ais_csv<W: Write>(out: W, msgs: &[AisMessage]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for m in msgs {
        w.serialize(AisRow::from(m))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_ais_csv_from<R: std::io::Read>(input: R, name: &str) -> Result<Vec<AisMessage>> {
    let mut r = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for (i, row) in r.deserialize::<AisRow>().enumerate() {
        let row = row.map_err(|e| Error::Parse {
            file: name.to_string(),
            line: e.position().map_or(i + 2, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        out.push(row.into());
    }
    Ok(out)
}

pub fn read_ais_csv(path: &Path) -> Result<Vec<AisMessage>> {
    read_ais_csv_from(File::open(path)?, &file_name(path))
}

pub fn read_ports(path: &Path) -> Result<Vec<PortRecord>> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        file: file_name(path),
        line: e.line(),
        msg: e.to_string(),
    })
}

pub fn write_ports(path: &Path, ports: &[PortRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, ports)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads one JSON value per non-empty line. With `schema_version`, every
/// line must carry that value in its `schema_version` field.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path, schema_version: Option<u32>) -> Result<Vec<T>> {
    let name = file_name(path);
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            file: name.clone(),
            line: i + 1,
            msg,
        };
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        if let Some(expected) = schema_version {
            let found = value.get("schema_version").and_then(|v| v.as_u64());
            match found {
                Some(v) if v == u64::from(expected) => {}
                Some(v) => {
                    return Err(Error::SchemaVersion {
                        found: v as u32,
                        expected,
                    })
                }
                None => return Err(parse_err("missing schema_version".into())),
            }
        }
        out.push(serde_json::from_value(value).map_err(|e| parse_err(e.to_string()))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn msg() -> AisMessage {
        AisMessage {
            vessel_id: "V1".into(),
            timestamp: 100,
            eta: Some(5000),
            pos: GeoPoint { lon: 103.123456789, lat: 1.25 },
            sog: Some(12.5),
            rot: None,
            cog: Some(90.0),
            heading: None,
            draught: Some(7.1),
            ship_type: 70,
            destination: "SG, SIN \"X\"".into(),
        }
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        let mut buf = Vec::new();
        write_ais_csv(&mut buf, &[msg(), msg()]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("vessel_id,timestamp,lon,lat,sog,rot,cog,heading,draught,eta,ship_type,destination\n"));
        let back = read_ais_csv_from(&buf[..], "mem").unwrap();
        assert_eq!(back, vec![msg(), msg()]);
    }

    #[test]
    fn csv_errors_name_line() {
        let text = "vessel_id,timestamp,lon,lat,sog,rot,cog,heading,draught,eta,ship_type,destination\n\
                    V,1,0,0,,,,,,,1,X\n\
                    V,notanumber,0,0,,,,,,,1,X\n";
        let err = read_ais_csv_from(text.as_bytes(), "in.csv").unwrap_err().to_string();
        assert!(err.starts_with("in.csv:3:"), "{err}");
    }

    #[test]
    fn jsonl_checks_version() {
        #[derive(Serialize, Deserialize, PartialEq, Debug)]
        struct R {
            schema_version: u32,
            x: i32,
        }
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.jsonl");
        write_jsonl(&p, &[R { schema_version: 2, x: 1 }]).unwrap();
        assert_eq!(read_jsonl::<R>(&p, Some(2)).unwrap(), vec![R { schema_version: 2, x: 1 }]);
        assert!(matches!(read_jsonl::<R>(&p, Some(1)), Err(Error::SchemaVersion { found: 2, expected: 1 })));
        std::fs::write(&p, "{\"schema_version\":2,\"x\":1}\n{oops\n").unwrap();
        let err = read_jsonl::<R>(&p, Some(2)).unwrap_err().to_string();
        assert!(err.contains("a.jsonl:2:"), "{err}");
    }
}
