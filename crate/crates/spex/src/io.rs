//! Station and maxima file formats, content hashing, and atomic writes.
//!
//! Stations are CSV with header `id,lon_km,lat_km,role`; maxima are CSV
//! with header `year,<id1>,<id2>,...` where an empty cell marks a missing
//! observation. Panels load with sites ordered by id, so column order in
//! the maxima file never matters. Floating point values are written in
//! the shortest decimal form that parses back to the identical bits,
//! which keeps every round trip exact.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cov::SiteSet;
use crate::error::{Error, Result};
use crate::marginal::MaximaPanel;

/// Station role: used when fitting, or held out for validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    Fit,
    Validate,
}

impl Role {
    fn parse(s: &str, line: usize) -> Result<Self> {
        match s {
            "fit" => Ok(Role::Fit),
            "validate" => Ok(Role::Validate),
            other => Err(Error::Schema {
                line: Some(line),
                message: format!("role must be 'fit' or 'validate', got '{other}'"),
            }),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Fit => "fit",
            Role::Validate => "validate",
        }
    }
}

/// Station list with roles, ordered by id.
#[derive(Debug, Clone)]
pub struct Stations {
    pub sites: SiteSet,
    pub roles: Vec<Role>,
}

fn schema(line: usize, message: impl Into<String>) -> Error {
    Error::Schema {
        line: Some(line),
        message: message.into(),
    }
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize);
    let message = e.to_string();
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        _ => Error::Schema { line, message },
    }
}

fn parse_cell(s: &str, what: &str, line: usize) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| schema(line, format!("{what} must be numeric, got '{s}'")))
}

/// Reads a stations file: CSV with header `id,lon_km,lat_km,role`.
/// Stations come back sorted by id regardless of file order.
pub fn load_stations(path: impl AsRef<Path>) -> Result<Stations> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path.as_ref())
        .map_err(csv_err)?;
    let header = reader.headers().map_err(|e| Error::Schema {
        line: Some(1),
        message: e.to_string(),
    })?;
    let want = ["id", "lon_km", "lat_km", "role"];
    if header.iter().collect::<Vec<_>>() != want {
        return Err(schema(
            1,
            format!(
                "stations header must be 'id,lon_km,lat_km,role', got '{}'",
                header.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    let mut rows: Vec<(String, [f64; 2], Role)> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() != 4 {
            return Err(schema(line, format!("expected 4 fields, got {}", record.len())));
        }
        let id = record[0].to_string();
        if id.is_empty() {
            return Err(schema(line, "station id must not be empty"));
        }
        // Ids end up as bare CSV header fields and output column names,
        // so keep them to characters that need no quoting there.
        if id == "year" || !id.chars().all(|c| c.is_ascii_alphanumeric() || "_.:-".contains(c)) {
            return Err(schema(
                line,
                format!("station id must be alphanumeric plus '_.:-' and not 'year', got '{id}'"),
            ));
        }
        if rows.iter().any(|(other, _, _)| *other == id) {
            return Err(schema(line, format!("duplicate station id '{id}'")));
        }
        let lon = parse_cell(&record[1], "lon_km", line)?;
        let lat = parse_cell(&record[2], "lat_km", line)?;
        let role = Role::parse(&record[3], line)?;
        rows.push((id, [lon, lat], role));
    }
    rows.sort_by(|a, b| a.0.cmp(&b.0));
    let ids: Vec<String> = rows.iter().map(|r| r.0.clone()).collect();
    let coords: Vec<[f64; 2]> = rows.iter().map(|r| r.1).collect();
    let roles: Vec<Role> = rows.iter().map(|r| r.2).collect();
    Ok(Stations {
        sites: SiteSet::new(ids, coords)?,
        roles,
    })
}

/// Reads a maxima file against a known site set: CSV with header
/// `year,<id1>,...`. Header ids must match the sites exactly (any
/// order); empty cells load as missing.
pub fn load_maxima(path: impl AsRef<Path>, sites: &SiteSet) -> Result<(Vec<i64>, Vec<Vec<f64>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path.as_ref())
        .map_err(csv_err)?;
    let header = reader.headers().map_err(|e| Error::Schema {
        line: Some(1),
        message: e.to_string(),
    })?;
    let cols: Vec<String> = header.iter().map(str::to_string).collect();
    if cols.first().map(String::as_str) != Some("year") {
        return Err(schema(1, "maxima header must start with 'year'"));
    }
    let file_ids = &cols[1..];
    for (k, id) in file_ids.iter().enumerate() {
        if file_ids[..k].contains(id) {
            return Err(schema(1, format!("duplicate station column '{id}'")));
        }
    }
    // Map each site to its column, demanding an exact id match both ways.
    let mut col_of_site = Vec::with_capacity(sites.len());
    for id in sites.ids() {
        match file_ids.iter().position(|c| c == id) {
            Some(k) => col_of_site.push(k + 1),
            None => {
                return Err(schema(1, format!("maxima file lacks a column for station '{id}'")))
            }
        }
    }
    if file_ids.len() != sites.len() {
        let extra: Vec<&str> = file_ids
            .iter()
            .filter(|c| !sites.ids().contains(c))
            .map(String::as_str)
            .collect();
        return Err(schema(
            1,
            format!("maxima columns not in the stations file: {}", extra.join(", ")),
        ));
    }
    let mut years = Vec::new();
    let mut values = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() != cols.len() {
            return Err(schema(
                line,
                format!("expected {} fields, got {}", cols.len(), record.len()),
            ));
        }
        let year: i64 = record[0]
            .parse()
            .map_err(|_| schema(line, format!("year must be an integer, got '{}'", &record[0])))?;
        let mut row = Vec::with_capacity(sites.len());
        for &k in &col_of_site {
            let cell = &record[k];
            if cell.is_empty() {
                row.push(f64::NAN);
            } else {
                row.push(parse_cell(cell, "maximum", line)?);
            }
        }
        years.push(year);
        values.push(row);
    }
    Ok((years, values))
}

/// Loads a maxima panel from a stations file and a maxima file, with the
/// station roles alongside.
pub fn load_panel(
    stations_path: impl AsRef<Path>,
    maxima_path: impl AsRef<Path>,
) -> Result<(MaximaPanel, Vec<Role>)> {
    let stations = load_stations(stations_path)?;
    let (years, values) = load_maxima(maxima_path, &stations.sites)?;
    let panel = MaximaPanel::new(stations.sites, years, values)?;
    Ok((panel, stations.roles))
}

/// Restricts a panel to the stations holding the given role.
pub fn filter_by_role(panel: &MaximaPanel, roles: &[Role], keep: Role) -> Result<MaximaPanel> {
    if roles.len() != panel.n_sites() {
        return Err(Error::shape(format!(
            "{} roles for {} stations",
            roles.len(),
            panel.n_sites()
        )));
    }
    let keep_idx: Vec<usize> = (0..roles.len()).filter(|&j| roles[j] == keep).collect();
    if keep_idx.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no station with role '{}'",
            keep.as_str()
        )));
    }
    let sites = panel.sites();
    let ids = keep_idx.iter().map(|&j| sites.ids()[j].clone()).collect();
    let coords = keep_idx.iter().map(|&j| sites.coord(j)).collect();
    let values = panel
        .rows()
        .iter()
        .map(|row| keep_idx.iter().map(|&j| row[j]).collect())
        .collect();
    MaximaPanel::new(SiteSet::new(ids, coords)?, panel.years().to_vec(), values)
}

/// Renders a panel in the maxima file format; missing cells are empty.
pub fn panel_csv(panel: &MaximaPanel) -> String {
    let sites = panel.sites();
    let mut out = String::from("year");
    for id in sites.ids() {
        out.push(',');
        out.push_str(id);
    }
    out.push('\n');
    for (t, year) in panel.years().iter().enumerate() {
        out.push_str(&year.to_string());
        for j in 0..sites.len() {
            out.push(',');
            let v = panel.value(t, j);
            if v.is_finite() {
                out.push_str(&format!("{v}"));
            }
        }
        out.push('\n');
    }
    out
}

/// Renders a site list in the stations file format.
pub fn stations_csv(sites: &SiteSet, roles: &[Role]) -> String {
    let mut out = String::from("id,lon_km,lat_km,role\n");
    for (j, id) in sites.ids().iter().enumerate() {
        let [lon, lat] = sites.coord(j);
        let role = match roles.get(j) {
            Some(Role::Validate) => "validate",
            _ => "fit",
        };
        out.push_str(&format!("{id},{lon},{lat},{role}\n"));
    }
    out
}

/// SHA-256 of a byte string, lowercase hex.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// SHA-256 of a file's content, lowercase hex.
pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    Ok(sha256_hex(&fs::read(path.as_ref())?))
}

/// Writes bytes through a temporary file in the target directory and
/// renames it into place, so readers never observe a partial file.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut tmp = match dir {
        Some(dir) => tempfile::NamedTempFile::new_in(dir)?,
        None => tempfile::NamedTempFile::new_in(".")?,
    };
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_file(dir: &tempfile::TempDir, name: &str, content: &str) -> std::path::PathBuf {
        let path = dir.path().join(name);
        let mut f = fs::File::create(&path).unwrap();
        f.write_all(content.as_bytes()).unwrap();
        path
    }

    fn same_panel(a: &MaximaPanel, b: &MaximaPanel) -> bool {
        a.sites() == b.sites()
            && a.years() == b.years()
            && (0..a.n_years()).all(|t| {
                (0..a.n_sites()).all(|j| a.value(t, j).to_bits() == b.value(t, j).to_bits())
            })
    }

    #[test]
    fn well_formed_files_load_into_a_panel() {
        let dir = tempfile::tempdir().unwrap();
        let stations = write_file(
            &dir,
            "stations.csv",
            "id,lon_km,lat_km,role\nb,10.0,0.0,validate\na,0.0,0.0,fit\n",
        );
        let maxima = write_file(
            &dir,
            "maxima.csv",
            "year,a,b\n1991,30.5,28.1\n1992,33.2,31.9\n1993,29.0,27.4\n",
        );
        let (panel, roles) = load_panel(&stations, &maxima).unwrap();
        assert_eq!(panel.n_sites(), 2);
        assert_eq!(panel.n_years(), 3);
        // Sites are ordered by id, so 'a' comes first despite file order.
        assert_eq!(panel.sites().ids(), ["a".to_string(), "b".to_string()]);
        assert_eq!(roles, [Role::Fit, Role::Validate]);
        assert_eq!(panel.value(0, 0), 30.5);
        assert_eq!(panel.value(2, 1), 27.4);
        assert_eq!(panel.years(), [1991, 1992, 1993]);
    }

    #[test]
    fn missing_cells_load_as_missing_not_zero() {
        let dir = tempfile::tempdir().unwrap();
        let stations = write_file(
            &dir,
            "stations.csv",
            "id,lon_km,lat_km,role\na,0.0,0.0,fit\nb,10.0,0.0,fit\n",
        );
        let maxima = write_file(&dir, "maxima.csv", "year,a,b\n1991,,28.1\n1992,33.2,\n");
        let (panel, _) = load_panel(&stations, &maxima).unwrap();
        assert!(panel.value(0, 0).is_nan());
        assert!(panel.value(1, 1).is_nan());
        assert_eq!(panel.value(0, 1), 28.1);
    }

    #[test]
    fn shuffled_maxima_columns_align_by_id() {
        let dir = tempfile::tempdir().unwrap();
        let stations = write_file(
            &dir,
            "stations.csv",
            "id,lon_km,lat_km,role\na,0.0,0.0,fit\nb,10.0,0.0,fit\n",
        );
        let forward = write_file(&dir, "m1.csv", "year,a,b\n1991,1.0,2.0\n");
        let shuffled = write_file(&dir, "m2.csv", "year,b,a\n1991,2.0,1.0\n");
        let (p1, _) = load_panel(&stations, &forward).unwrap();
        let (p2, _) = load_panel(&stations, &shuffled).unwrap();
        assert!(same_panel(&p1, &p2));
    }

    #[test]
    fn schema_violations_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let dup = write_file(
            &dir,
            "dup.csv",
            "id,lon_km,lat_km,role\na,0.0,0.0,fit\na,1.0,0.0,fit\n",
        );
        match load_stations(&dup) {
            Err(Error::Schema { line: Some(3), message }) => {
                assert!(message.contains("duplicate"), "{message}");
            }
            other => panic!("expected a line-3 schema error, got {other:?}"),
        }

        let bad_role = write_file(&dir, "role.csv", "id,lon_km,lat_km,role\na,0.0,0.0,holdout\n");
        assert!(matches!(
            load_stations(&bad_role),
            Err(Error::Schema { line: Some(2), .. })
        ));

        let stations = write_file(
            &dir,
            "stations.csv",
            "id,lon_km,lat_km,role\na,0.0,0.0,fit\nb,10.0,0.0,fit\n",
        );
        let bad_cell = write_file(&dir, "cell.csv", "year,a,b\n1991,30.5,oops\n");
        let sites = load_stations(&stations).unwrap().sites;
        match load_maxima(&bad_cell, &sites) {
            Err(Error::Schema { line: Some(2), message }) => {
                assert!(message.contains("numeric"), "{message}");
            }
            other => panic!("expected a line-2 schema error, got {other:?}"),
        }

        let missing_col = write_file(&dir, "mc.csv", "year,a\n1991,30.5\n");
        assert!(matches!(
            load_maxima(&missing_col, &sites),
            Err(Error::Schema { line: Some(1), .. })
        ));

        let extra_col = write_file(&dir, "xc.csv", "year,a,b,c\n1991,1.0,2.0,3.0\n");
        match load_maxima(&extra_col, &sites) {
            Err(Error::Schema { message, .. }) => assert!(message.contains('c'), "{message}"),
            other => panic!("expected a schema error, got {other:?}"),
        }
    }

    #[test]
    fn role_filtering_keeps_matching_stations_only() {
        let dir = tempfile::tempdir().unwrap();
        let stations = write_file(
            &dir,
            "stations.csv",
            "id,lon_km,lat_km,role\na,0.0,0.0,fit\nb,10.0,0.0,validate\nc,20.0,0.0,fit\n",
        );
        let maxima = write_file(
            &dir,
            "maxima.csv",
            "year,a,b,c\n1991,1.0,2.0,3.0\n1992,4.0,5.0,6.0\n",
        );
        let (panel, roles) = load_panel(&stations, &maxima).unwrap();
        let fit = filter_by_role(&panel, &roles, Role::Fit).unwrap();
        assert_eq!(fit.sites().ids(), ["a".to_string(), "c".to_string()]);
        assert_eq!(fit.value(0, 1), 3.0);
        assert_eq!(fit.value(1, 0), 4.0);
        let val = filter_by_role(&panel, &roles, Role::Validate).unwrap();
        assert_eq!(val.sites().ids(), ["b".to_string()]);
        assert!(matches!(
            filter_by_role(&val, &[Role::Fit], Role::Validate),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn panel_csv_round_trips_including_missing_cells() {
        let dir = tempfile::tempdir().unwrap();
        let stations = write_file(
            &dir,
            "stations.csv",
            "id,lon_km,lat_km,role\na,0.25,-3.5,fit\nb,10.125,4.0,fit\n",
        );
        let maxima = write_file(
            &dir,
            "maxima.csv",
            "year,a,b\n1991,30.123456789012345,\n1992,,0.1\n",
        );
        let (panel, roles) = load_panel(&stations, &maxima).unwrap();
        let rendered = panel_csv(&panel);
        let back = write_file(&dir, "again.csv", &rendered);
        let (panel2, _) = load_panel(&stations, &back).unwrap();
        assert!(same_panel(&panel, &panel2));

        let srendered = stations_csv(panel.sites(), &roles);
        let sback = write_file(&dir, "stations2.csv", &srendered);
        let again = load_stations(&sback).unwrap();
        assert_eq!(again.sites, *panel.sites());
        assert_eq!(again.roles, roles);
    }

    #[test]
    fn atomic_writes_and_hashes_are_stable() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.txt");
        write_atomic(&path, b"payload").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"payload");
        write_atomic(&path, b"replaced").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"replaced");
        // Frozen from the published SHA-256 test vector for "abc".
        let abc = write_file(&dir, "abc.txt", "abc");
        assert_eq!(
            sha256_file(&abc).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_eq!(sha256_hex(b"abc"), sha256_file(&abc).unwrap());
    }
}
