use std::collections::BTreeSet;
use std::path::Path;

use csv::{ReaderBuilder, StringRecord, WriterBuilder};

use crate::error::{GravityError, Result};
use crate::io::domestic::GdpRow;
use crate::panel::{
    validate_flows, Agreement, AgreementKind, AgreementTable, Country, PanelObservation, RegimeRow, RegimeTable,
    Standard,
};

const FLOW_HEADER: [&str; 4] = ["exporter", "importer", "year", "flow"];
const REGIME_HEADER: [&str; 4] = ["country", "year", "standard", "lmu_member"];
const AGREEMENT_HEADER: [&str; 5] = ["c1", "c2", "year_start", "year_end", "kind"];
const GDP_HEADER: [&str; 3] = ["country", "year", "gdp"];

#[derive(Clone, Debug, PartialEq)]
pub struct FlowTable {
    pub observations: Vec<PanelObservation>,
    pub rows_read: usize,
}

struct Records {
    path: String,
    rows: Vec<(u64, StringRecord)>,
}

impl Records {
    fn open(path: &Path, header: &[&str]) -> Result<Self> {
        let display = path.display().to_string();
        let mut rdr = ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
        let found: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if found != header {
            return Err(GravityError::Parse {
                path: display,
                line: 1,
                message: format!("expected header '{}', found '{}'", header.join(","), found.join(",")),
            });
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| GravityError::Parse {
                path: display.clone(),
                line: e.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            })?;
            let line = rec.position().map_or(0, |p| p.line());
            rows.push((line, rec));
        }
        Ok(Records { path: display, rows })
    }

    fn err(&self, line: u64, message: impl Into<String>) -> GravityError {
        GravityError::Parse {
            path: self.path.clone(),
            line,
            message: message.into(),
        }
    }

    fn year(&self, line: u64, field: &str) -> Result<i32> {
        field
            .parse()
            .map_err(|_| self.err(line, format!("invalid year '{field}'")))
    }

    fn amount(&self, line: u64, field: &str) -> Result<f64> {
        let v: f64 = field
            .parse()
            .map_err(|_| self.err(line, format!("invalid number '{field}'")))?;
        if !v.is_finite() || v < 0.0 {
            return Err(self.err(line, format!("value must be finite and nonnegative, got '{field}'")));
        }
        Ok(v)
    }

    fn code(&self, line: u64, field: &str) -> Result<Country> {
        if field.is_empty() {
            return Err(self.err(line, "empty country code"));
        }
        Ok(Country::new(field))
    }
}

/// Reads `exporter,importer,year,flow`. When `known` is given, every code
/// must belong to it.
pub fn read_flows(path: &Path, known: Option<&BTreeSet<Country>>) -> Result<FlowTable> {
    let recs = Records::open(path, &FLOW_HEADER)?;
    let mut observations = Vec::with_capacity(recs.rows.len());
    for (line, r) in &recs.rows {
        observations.push(PanelObservation {
            exporter: recs.code(*line, &r[0])?,
            importer: recs.code(*line, &r[1])?,
            year: recs.year(*line, &r[2])?,
            flow: recs.amount(*line, &r[3])?,
        });
    }
    if let Some(known) = known {
        let unknown: BTreeSet<String> = observations
            .iter()
            .flat_map(|o| [&o.exporter, &o.importer])
            .filter(|c| !known.contains(*c))
            .map(|c| c.to_string())
            .collect();
        if !unknown.is_empty() {
            return Err(GravityError::UnknownCountryCodes(unknown.into_iter().collect()));
        }
    }
    validate_flows(&observations)?;
    log::info!("read {} flow rows from {}", observations.len(), recs.path);
    Ok(FlowTable {
        rows_read: observations.len(),
        observations,
    })
}

pub fn write_flows(path: &Path, observations: &[PanelObservation]) -> Result<()> {
    let mut w = WriterBuilder::new().from_path(path)?;
    w.write_record(FLOW_HEADER)?;
    for o in observations {
        w.write_record([
            o.exporter.as_str(),
            o.importer.as_str(),
            &o.year.to_string(),
            &o.flow.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn parse_bool(field: &str) -> Option<bool> {
    match field.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" => Some(true),
        "0" | "false" | "no" => Some(false),
        _ => None,
    }
}

/// Reads `country,year,standard,lmu_member`.
pub fn read_regimes(path: &Path) -> Result<RegimeTable> {
    let recs = Records::open(path, &REGIME_HEADER)?;
    let mut rows = Vec::with_capacity(recs.rows.len());
    for (line, r) in &recs.rows {
        let standard: Standard = r[2]
            .parse()
            .map_err(|e: GravityError| recs.err(*line, e.to_string()))?;
        let lmu_member = parse_bool(&r[3]).ok_or_else(|| recs.err(*line, format!("invalid lmu_member '{}'", &r[3])))?;
        rows.push(RegimeRow {
            country: recs.code(*line, &r[0])?,
            year: recs.year(*line, &r[1])?,
            standard,
            lmu_member,
        });
    }
    RegimeTable::from_rows(rows)
}

pub fn write_regimes(path: &Path, regimes: &RegimeTable) -> Result<()> {
    let mut w = WriterBuilder::new().from_path(path)?;
    w.write_record(REGIME_HEADER)?;
    for r in regimes.rows() {
        w.write_record([
            r.country.as_str(),
            &r.year.to_string(),
            &r.standard.to_string(),
            if r.lmu_member { "1" } else { "0" },
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `c1,c2,year_start,year_end,kind` with kind one of `ta`,
/// `alliance`, `war`.
pub fn read_agreements(path: &Path) -> Result<AgreementTable> {
    let recs = Records::open(path, &AGREEMENT_HEADER)?;
    let mut out = Vec::with_capacity(recs.rows.len());
    for (line, r) in &recs.rows {
        let kind: AgreementKind = r[4]
            .parse()
            .map_err(|e: GravityError| recs.err(*line, e.to_string()))?;
        out.push(Agreement {
            c1: recs.code(*line, &r[0])?,
            c2: recs.code(*line, &r[1])?,
            year_start: recs.year(*line, &r[2])?,
            year_end: recs.year(*line, &r[3])?,
            kind,
        });
    }
    AgreementTable::new(out)
}

pub fn write_agreements(path: &Path, agreements: &AgreementTable) -> Result<()> {
    let mut w = WriterBuilder::new().from_path(path)?;
    w.write_record(AGREEMENT_HEADER)?;
    for a in agreements.agreements() {
        let kind = match a.kind {
            AgreementKind::TradeAgreement => "ta",
            AgreementKind::Alliance => "alliance",
            AgreementKind::War => "war",
        };
        w.write_record([
            a.c1.as_str(),
            a.c2.as_str(),
            &a.year_start.to_string(),
            &a.year_end.to_string(),
            kind,
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `country,year,gdp` (nominal, same currency as the flows).
pub fn read_gdp(path: &Path) -> Result<Vec<GdpRow>> {
    let recs = Records::open(path, &GDP_HEADER)?;
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(recs.rows.len());
    for (line, r) in &recs.rows {
        let row = GdpRow {
            country: recs.code(*line, &r[0])?,
            year: recs.year(*line, &r[1])?,
            gdp: recs.amount(*line, &r[2])?,
        };
        if !seen.insert((row.country.clone(), row.year)) {
            return Err(recs.err(*line, format!("duplicate GDP row for {} {}", row.country, row.year)));
        }
        out.push(row);
    }
    Ok(out)
}

pub fn write_gdp(path: &Path, rows: &[GdpRow]) -> Result<()> {
    let mut w = WriterBuilder::new().from_path(path)?;
    w.write_record(GDP_HEADER)?;
    for r in rows {
        w.write_record([r.country.as_str(), &r.year.to_string(), &r.gdp.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn reads_valid_flows() {
        let f = file("exporter,importer,year,flow\nFRA,ITA,1866,10.5\nITA,FRA,1866,0\nFRA,BEL,1867,3\n");
        let t = read_flows(f.path(), None).unwrap();
        assert_eq!(t.rows_read, 3);
        assert_eq!(t.observations[0], PanelObservation::new("FRA", "ITA", 1866, 10.5));
    }

    #[test]
    fn negative_flow_rejected_with_line() {
        let f = file("exporter,importer,year,flow\nFRA,ITA,1866,10\nITA,FRA,1866,-5\n");
        match read_flows(f.path(), None).unwrap_err() {
            GravityError::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e}"),
        }
        let f = file("exporter,importer,year,flow\nFRA,ITA,1866,NaN\n");
        assert!(matches!(read_flows(f.path(), None), Err(GravityError::Parse { line: 2, .. })));
        let f = file("exporter,importer,year,flow\nFRA,ITA,1866,\u{2212}5\n");
        assert!(read_flows(f.path(), None).is_err());
    }

    #[test]
    fn duplicate_and_unknown_codes() {
        let f = file("exporter,importer,year,flow\nFRA,ITA,1866,1\nFRA,ITA,1866,2\n");
        let err = read_flows(f.path(), None).unwrap_err();
        assert!(matches!(err, GravityError::DuplicateObservations(ref d) if d == &vec!["FRA-ITA-1866".to_string()]));

        let f = file("exporter,importer,year,flow\nFRA,XYZ,1866,1\n");
        let known = crate::panel::reference_countries();
        let err = read_flows(f.path(), Some(&known)).unwrap_err();
        assert!(err.to_string().contains("XYZ"));
    }

    #[test]
    fn wrong_header_rejected() {
        let f = file("from,to,year,value\nFRA,ITA,1866,1\n");
        assert!(matches!(read_flows(f.path(), None), Err(GravityError::Parse { line: 1, .. })));
    }

    #[test]
    fn regime_and_agreement_files() {
        let f = file("country,year,standard,lmu_member\nFRA,1866,bimetallic,1\nGBR,1866,gold,0\n");
        let r = read_regimes(f.path()).unwrap();
        assert!(r.get(&Country::new("FRA"), 1866).unwrap().lmu_member);
        let f = file("country,year,standard,lmu_member\nFRA,1866,copper,1\n");
        assert!(matches!(read_regimes(f.path()), Err(GravityError::Parse { line: 2, .. })));

        let f = file("c1,c2,year_start,year_end,kind\nFRA,GBR,1860,1872,ta\nFRA,DEU,1870,1871,war\n");
        let a = read_agreements(f.path()).unwrap();
        assert!(a.active(AgreementKind::War, &Country::new("DEU"), &Country::new("FRA"), 1870));
        let f = file("c1,c2,year_start,year_end,kind\nFRA,GBR,1860,1872,embargo\n");
        assert!(read_agreements(f.path()).is_err());
    }

    #[test]
    fn gdp_file() {
        let f = file("country,year,gdp\nFRA,1866,100\n");
        assert_eq!(read_gdp(f.path()).unwrap()[0].gdp, 100.0);
        let f = file("country,year,gdp\nFRA,1866,100\nFRA,1866,90\n");
        assert!(read_gdp(f.path()).is_err());
    }
}
