//! Embeddings and data files.
//!
//! Classical MDS turns code-distance matrices into planar layouts. The
//! emitters write CSV for tables (histories, joint matrices, distance
//! matrices, sub-population summaries) and pretty JSON for structured data.
//! Every number goes through [`round12`], so files are byte-identical for
//! identical inputs. Each writer has a matching reader.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{self, DistanceMatrix};
use crate::optimizer::{GenerationRecord, RunHistory};
use crate::popmodel::Population;
use crate::probkit::Dist2;

/// Rounds to 12 significant digits.
pub fn round12(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.11e}").parse().expect("formatted float parses")
}

/// Shortest text that reads back as `round12(x)`.
pub fn fmt_num(x: f64) -> String {
    let r = round12(x);
    if r == 0.0 {
        // no negative zero in files
        "0".to_string()
    } else if r.abs() < 1e-5 || r.abs() >= 1e15 {
        format!("{r:e}")
    } else {
        format!("{r}")
    }
}

/// Planar layout of a distance matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding2D {
    pub points: Vec<[f64; 2]>,
    /// Point weight, e.g. the number of agents sharing a code.
    pub sizes: Vec<usize>,
    /// Group label of each point, e.g. its sub-population.
    pub components: Vec<usize>,
    /// RMS difference between embedded and input distances.
    pub stress: f64,
}

/// Classical (Torgerson) scaling onto the two leading axes.
///
/// The layout is centred at the origin, axes are ordered by decreasing
/// eigenvalue and each axis is flipped so its first non-negligible
/// coordinate is positive. Negative eigenvalues are clamped to zero.
pub fn mds_embed(d: &DistanceMatrix) -> Result<Embedding2D> {
    let n = d.len();
    for i in 0..n {
        for j in 0..n {
            let (a, b) = (d.get(i, j), d.get(j, i));
            if !a.is_finite() || (a - b).abs() > 1e-9 * (1.0 + a.abs()) {
                return Err(Error::ShapeMismatch(format!(
                    "distance matrix is not symmetric at ({i}, {j})"
                )));
            }
        }
        if d.get(i, i).abs() > 1e-9 {
            return Err(Error::ShapeMismatch(format!(
                "distance matrix has non-zero diagonal at {i}"
            )));
        }
    }
    let mut points = vec![[0.0; 2]; n];
    if n >= 2 {
        let sq = DMatrix::from_fn(n, n, |i, j| {
            let x = 0.5 * (d.get(i, j) + d.get(j, i));
            x * x
        });
        let row_mean: Vec<f64> = (0..n).map(|i| sq.row(i).sum() / n as f64).collect();
        let all_mean = row_mean.iter().sum::<f64>() / n as f64;
        let b = DMatrix::from_fn(n, n, |i, j| {
            -0.5 * (sq[(i, j)] - row_mean[i] - row_mean[j] + all_mean)
        });
        let eig = SymmetricEigen::new(b);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[b]
                .total_cmp(&eig.eigenvalues[a])
                .then(a.cmp(&b))
        });
        for (axis, &k) in order.iter().take(2).enumerate() {
            let scale = eig.eigenvalues[k].max(0.0).sqrt();
            let v = eig.eigenvectors.column(k);
            let flip = match v.iter().find(|x| x.abs() > 1e-9) {
                Some(&x) if x < 0.0 => -1.0,
                _ => 1.0,
            };
            for i in 0..n {
                let c = flip * v[i] * scale;
                points[i][axis] = if c.abs() < 1e-15 { 0.0 } else { c };
            }
        }
    }
    let mut err = 0.0;
    let mut pairs = 0usize;
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = points[i][0] - points[j][0];
            let dy = points[i][1] - points[j][1];
            err += ((dx * dx + dy * dy).sqrt() - d.get(i, j)).powi(2);
            pairs += 1;
        }
    }
    let stress = if pairs == 0 { 0.0 } else { (err / pairs as f64).sqrt() };
    Ok(Embedding2D {
        points,
        sizes: vec![1; n],
        components: vec![0; n],
        stress,
    })
}

/// Embedding of a population's distinct codes, one point per code type,
/// sized by the number of agents using it and labelled with the
/// sub-population of its first agent.
pub fn type_embedding(pop: &Population) -> Result<Embedding2D> {
    let structure = metrics::analyze_structure(pop);
    let mut component_of = vec![0; pop.num_agents()];
    for c in &structure.components {
        for &a in &c.agents {
            component_of[a] = c.id;
        }
    }
    let reps: Vec<_> = structure
        .types
        .iter()
        .map(|t| &pop.codes()[t.agents[0]])
        .collect();
    let d = DistanceMatrix::from_codes(&reps)?;
    let mut e = mds_embed(&d)?;
    e.sizes = structure.types.iter().map(|t| t.agents.len()).collect();
    e.components = structure
        .types
        .iter()
        .map(|t| component_of[t.agents[0]])
        .collect();
    Ok(e)
}

fn rounded(v: serde_json::Value) -> serde_json::Value {
    use serde_json::Value;
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().expect("f64 number");
            serde_json::Number::from_f64(round12(x) + 0.0)
                .map(Value::Number)
                .unwrap_or(Value::Null)
        }
        Value::Array(a) => Value::Array(a.into_iter().map(rounded).collect()),
        Value::Object(o) => Value::Object(o.into_iter().map(|(k, v)| (k, rounded(v))).collect()),
        other => other,
    }
}

/// Pretty JSON with every float rounded to 12 significant digits,
/// newline-terminated.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value).map_err(|e| Error::Usage(e.to_string()))?;
    let mut s = serde_json::to_string_pretty(&rounded(v)).map_err(|e| Error::Usage(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    fs::write(path, to_json(value)?).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(BufWriter::new(f)))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::parse(path, format!("{other:?}")),
    }
}

fn finish(mut w: csv::Writer<BufWriter<File>>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))?;
    let mut inner = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    inner.flush().map_err(|e| Error::io(path, e))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    csv::Reader::from_path(path).map_err(|e| csv_err(path, e))
}

fn parse_cell<T: std::str::FromStr>(path: &Path, cell: &str) -> Result<T> {
    cell.trim()
        .parse()
        .map_err(|_| Error::parse(path, format!("bad value {cell:?}")))
}

fn parse_opt(path: &Path, cell: &str) -> Result<Option<f64>> {
    if cell.trim().is_empty() {
        Ok(None)
    } else {
        parse_cell(path, cell).map(Some)
    }
}

pub const HISTORY_COLUMNS: [&str; 8] = [
    "generation",
    "best_fitness",
    "mean_fitness",
    "mutual_understanding",
    "blend_kl",
    "missing_info",
    "parasite_env_info",
    "parasite_symbol_mass",
];

/// One row per generation; measures that do not apply are left empty.
pub fn write_history_csv(h: &RunHistory, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(HISTORY_COLUMNS).map_err(|e| csv_err(path, e))?;
    let opt = |x: Option<f64>| x.map(fmt_num).unwrap_or_default();
    for r in &h.records {
        w.write_record([
            r.generation.to_string(),
            fmt_num(r.best_fitness),
            fmt_num(r.mean_fitness),
            fmt_num(r.mutual_understanding),
            opt(r.blend_kl),
            opt(r.missing_info),
            opt(r.parasite_env_info),
            opt(r.parasite_symbol_mass),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    finish(w, path)
}

pub fn read_history_csv(path: &Path) -> Result<Vec<GenerationRecord>> {
    let mut r = csv_reader(path)?;
    let mut out = Vec::new();
    for row in r.records() {
        let row = row.map_err(|e| csv_err(path, e))?;
        if row.len() != HISTORY_COLUMNS.len() {
            return Err(Error::parse(path, format!("expected {} columns", HISTORY_COLUMNS.len())));
        }
        out.push(GenerationRecord {
            generation: parse_cell(path, &row[0])?,
            best_fitness: parse_cell(path, &row[1])?,
            mean_fitness: parse_cell(path, &row[2])?,
            mutual_understanding: parse_cell(path, &row[3])?,
            blend_kl: parse_opt(path, &row[4])?,
            missing_info: parse_opt(path, &row[5])?,
            parasite_env_info: parse_opt(path, &row[6])?,
            parasite_symbol_mass: parse_opt(path, &row[7])?,
        });
    }
    Ok(out)
}

/// Parallel series by generation: a `generation` column, then one column per
/// label. Shorter series leave their trailing cells empty.
pub fn write_series_csv(series: &[(String, Vec<f64>)], path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["generation".to_string()];
    header.extend(series.iter().map(|s| s.0.clone()));
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    let rows = series.iter().map(|s| s.1.len()).max().unwrap_or(0);
    for g in 0..rows {
        let mut row = vec![g.to_string()];
        row.extend(series.iter().map(|s| s.1.get(g).map(|&x| fmt_num(x)).unwrap_or_default()));
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    finish(w, path)
}

pub fn read_series_csv(path: &Path) -> Result<Vec<(String, Vec<f64>)>> {
    let mut r = csv_reader(path)?;
    let mut out: Vec<(String, Vec<f64>)> = r
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .skip(1)
        .map(|h| (h.to_string(), Vec::new()))
        .collect();
    for row in r.records() {
        let row = row.map_err(|e| csv_err(path, e))?;
        for (i, cell) in row.iter().skip(1).enumerate() {
            if let Some(x) = parse_opt(path, cell)? {
                out[i].1.push(x);
            }
        }
    }
    Ok(out)
}

fn symbol_label(i: usize) -> String {
    format!("x{}", i + 1)
}

/// Joint message matrix: a header of symbol labels `x1..xS`, then one row
/// per sender symbol.
pub fn write_joint_csv(j: &Dist2, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["symbol".to_string()];
    header.extend((0..j.cols()).map(symbol_label));
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for x in 0..j.rows() {
        let mut row = vec![symbol_label(x)];
        row.extend((0..j.cols()).map(|y| fmt_num(j.get(x, y))));
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    finish(w, path)
}

pub fn read_joint_csv(path: &Path) -> Result<Dist2> {
    let (cols, rows) = read_square(path)?;
    let n = rows.len();
    if cols != n {
        return Err(Error::parse(path, "joint matrix is not square".to_string()));
    }
    Dist2::new(n, n, rows.concat()).map_err(|e| Error::parse(path, e.to_string()))
}

/// Distance matrix with agent (or type) ids as row and column labels.
pub fn write_distance_csv(d: &DistanceMatrix, labels: &[usize], path: &Path) -> Result<()> {
    if labels.len() != d.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {} points",
            labels.len(),
            d.len()
        )));
    }
    let mut w = csv_writer(path)?;
    let mut header = vec!["id".to_string()];
    header.extend(labels.iter().map(|l| l.to_string()));
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for (i, l) in labels.iter().enumerate() {
        let mut row = vec![l.to_string()];
        row.extend((0..d.len()).map(|j| fmt_num(d.get(i, j))));
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    finish(w, path)
}

pub fn read_distance_csv(path: &Path) -> Result<(Vec<usize>, DistanceMatrix)> {
    let mut r = csv_reader(path)?;
    let mut labels = Vec::new();
    let mut values = Vec::new();
    for row in r.records() {
        let row = row.map_err(|e| csv_err(path, e))?;
        labels.push(parse_cell(path, &row[0])?);
        for cell in row.iter().skip(1) {
            values.push(parse_cell::<f64>(path, cell)?);
        }
    }
    let d = DistanceMatrix::new(labels.len(), values).map_err(|e| Error::parse(path, e.to_string()))?;
    Ok((labels, d))
}

fn read_square(path: &Path) -> Result<(usize, Vec<Vec<f64>>)> {
    let mut r = csv_reader(path)?;
    let cols = r.headers().map_err(|e| csv_err(path, e))?.len().saturating_sub(1);
    let mut rows = Vec::new();
    for row in r.records() {
        let row = row.map_err(|e| csv_err(path, e))?;
        let vals = row
            .iter()
            .skip(1)
            .map(|c| parse_cell::<f64>(path, c))
            .collect::<Result<Vec<_>>>()?;
        if vals.len() != cols {
            return Err(Error::parse(path, "ragged matrix".to_string()));
        }
        rows.push(vals);
    }
    Ok((cols, rows))
}

/// One line of the sub-population summary: mutual understanding of the
/// sub-population before the attack, after it and after the response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    /// Component id, or `all` for the whole population.
    pub component: String,
    pub size: usize,
    pub type_sizes: Vec<usize>,
    pub before_attack: Option<f64>,
    pub after_attack: Option<f64>,
    pub after_response: Option<f64>,
}

pub const SUMMARY_COLUMNS: [&str; 6] = [
    "component",
    "size",
    "type_sizes",
    "i1_before_attack",
    "i2_after_attack",
    "i3_after_response",
];

/// Type sizes are joined with `;`.
pub fn write_summary_csv(rows: &[SummaryRow], path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(SUMMARY_COLUMNS).map_err(|e| csv_err(path, e))?;
    let opt = |x: Option<f64>| x.map(fmt_num).unwrap_or_default();
    for r in rows {
        let sizes: Vec<String> = r.type_sizes.iter().map(|s| s.to_string()).collect();
        w.write_record([
            r.component.clone(),
            r.size.to_string(),
            sizes.join(";"),
            opt(r.before_attack),
            opt(r.after_attack),
            opt(r.after_response),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    finish(w, path)
}

pub fn read_summary_csv(path: &Path) -> Result<Vec<SummaryRow>> {
    let mut r = csv_reader(path)?;
    let mut out = Vec::new();
    for row in r.records() {
        let row = row.map_err(|e| csv_err(path, e))?;
        if row.len() != SUMMARY_COLUMNS.len() {
            return Err(Error::parse(path, format!("expected {} columns", SUMMARY_COLUMNS.len())));
        }
        let type_sizes = if row[2].is_empty() {
            Vec::new()
        } else {
            row[2]
                .split(';')
                .map(|c| parse_cell(path, c))
                .collect::<Result<Vec<_>>>()?
        };
        out.push(SummaryRow {
            component: row[0].to_string(),
            size: parse_cell(path, &row[1])?,
            type_sizes,
            before_attack: parse_opt(path, &row[3])?,
            after_attack: parse_opt(path, &row[4])?,
            after_response: parse_opt(path, &row[5])?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizer::Goal;
    use tempfile::tempdir;

    fn from_points(p: &[[f64; 2]]) -> DistanceMatrix {
        let n = p.len();
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                d[i * n + j] = ((p[i][0] - p[j][0]).powi(2) + (p[i][1] - p[j][1]).powi(2)).sqrt();
            }
        }
        DistanceMatrix::new(n, d).unwrap()
    }

    fn embedded(e: &Embedding2D, i: usize, j: usize) -> f64 {
        let (a, b) = (e.points[i], e.points[j]);
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
    }

    #[test]
    fn rounding() {
        assert_eq!(fmt_num(0.1), "0.1");
        assert_eq!(fmt_num(1.0 / 3.0), "0.333333333333");
        assert_eq!(fmt_num(3.9269000000000004), "3.9269");
        assert_eq!(fmt_num(-0.0), "0");
        assert_eq!(fmt_num(1e-20 / 3.0), "3.33333333333e-21");
    }

    #[test]
    fn equilateral_triangle() {
        let h = 3f64.sqrt() / 2.0;
        let e = mds_embed(&from_points(&[[0.0, 0.0], [1.0, 0.0], [0.5, h]])).unwrap();
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            assert!((embedded(&e, i, j) - 1.0).abs() < 1e-6);
        }
        let cx: f64 = e.points.iter().map(|p| p[0]).sum();
        let cy: f64 = e.points.iter().map(|p| p[1]).sum();
        assert!(cx.abs() < 1e-9 && cy.abs() < 1e-9);
    }

    #[test]
    fn zero_matrix() {
        let e = mds_embed(&DistanceMatrix::new(3, vec![0.0; 9]).unwrap()).unwrap();
        assert!(e.points.iter().all(|p| p == &[0.0, 0.0]));
        assert_eq!(e.stress, 0.0);
    }

    #[test]
    fn unit_square() {
        let d = from_points(&[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]);
        let e = mds_embed(&d).unwrap();
        assert!(e.stress < 1e-6);
    }

    #[test]
    fn rejects_asymmetric() {
        let d = DistanceMatrix::new(2, vec![0.0, 1.0, 2.0, 0.0]).unwrap();
        assert!(mds_embed(&d).is_err());
    }

    #[test]
    fn sign_convention() {
        let d = from_points(&[[0.0, 0.0], [3.0, 0.0], [0.0, 1.0], [5.0, 2.0]]);
        let e = mds_embed(&d).unwrap();
        for axis in 0..2 {
            let first = e.points.iter().map(|p| p[axis]).find(|x| x.abs() > 1e-9).unwrap();
            assert!(first > 0.0);
        }
    }

    #[test]
    fn csv_files() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("h.csv");
        write_history_csv(&RunHistory::new(Goal::Baseline), &p).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap().lines().count(), 1);

        let j = Dist2::new(2, 2, vec![0.5, 0.0, 0.0, 0.5]).unwrap();
        let p = dir.path().join("j.csv");
        write_joint_csv(&j, &p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text, "symbol,x1,x2\nx1,0.5,0\nx2,0,0.5\n");
        assert_eq!(read_joint_csv(&p).unwrap(), j);
    }

    #[test]
    fn history_round_trip() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("h.csv");
        let mut h = RunHistory::new(Goal::Attack);
        h.records.push(GenerationRecord {
            generation: 0,
            best_fitness: 1.0 / 3.0,
            mean_fitness: 0.5,
            mutual_understanding: 1.0 / 3.0,
            blend_kl: Some(0.25),
            missing_info: None,
            parasite_env_info: Some(4.0),
            parasite_symbol_mass: Some(0.1),
        });
        write_history_csv(&h, &p).unwrap();
        let back = read_history_csv(&p).unwrap();
        assert_eq!(back[0].best_fitness, round12(1.0 / 3.0));
        assert_eq!(back[0].missing_info, None);
        assert_eq!(back[0].parasite_env_info, Some(4.0));
    }

    #[test]
    fn summary_and_distance_round_trip() {
        let dir = tempdir().unwrap();
        let rows = vec![
            SummaryRow {
                component: "0".into(),
                size: 47,
                type_sizes: vec![41, 6],
                before_attack: Some(3.93),
                after_attack: Some(2.85),
                after_response: None,
            },
            SummaryRow {
                component: "all".into(),
                size: 47,
                type_sizes: vec![],
                before_attack: None,
                after_attack: None,
                after_response: Some(3.5),
            },
        ];
        let p = dir.path().join("s.csv");
        write_summary_csv(&rows, &p).unwrap();
        assert_eq!(read_summary_csv(&p).unwrap(), rows);

        let d = DistanceMatrix::new(2, vec![0.0, 0.25, 0.25, 0.0]).unwrap();
        let p = dir.path().join("d.csv");
        write_distance_csv(&d, &[3, 7], &p).unwrap();
        let (labels, back) = read_distance_csv(&p).unwrap();
        assert_eq!(labels, vec![3, 7]);
        assert_eq!(back, d);
    }

    #[test]
    fn json_round_trip() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("e.json");
        let e = Embedding2D {
            points: vec![[0.5, -1.0 / 3.0]],
            sizes: vec![4],
            components: vec![0],
            stress: 0.0,
        };
        write_json(&e, &p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.ends_with("}\n"));
        let back: Embedding2D = read_json(&p).unwrap();
        assert_eq!(back.points[0][1], round12(-1.0 / 3.0));
        assert_eq!(to_json(&back).unwrap(), text);
    }

    #[test]
    fn series_round_trip() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("s.csv");
        let series = vec![("a".to_string(), vec![1.0, 0.5, 0.25]), ("b".to_string(), vec![2.0])];
        write_series_csv(&series, &p).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "generation,a,b\n0,1,2\n1,0.5,\n2,0.25,\n");
        assert_eq!(read_series_csv(&p).unwrap(), series);
    }
}
