//! File formats: versioned JSON for data sets, grids, models and reports;
//! CSV for tabular exports.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DVector;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dynamics::{DataSet, DataSetMeta, Trajectory};
use crate::error::{Error, Result};
use crate::estimator::{FitDiagnostics, LatticeValues, VectorFieldModel};
use crate::grid::GridSet;
use crate::kernels::{Centers, KernelSpec};
use crate::linalg::{matrix_from_rows, matrix_to_rows};

pub const FORMAT_VERSION: u32 = 1;

fn to_rows(vs: &[DVector<f64>]) -> Vec<Vec<f64>> {
    vs.iter().map(|v| v.iter().copied().collect()).collect()
}

fn from_rows(dim: usize, rows: &[Vec<f64>]) -> Result<Vec<DVector<f64>>> {
    rows.iter()
        .map(|r| {
            if r.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: r.len() });
            }
            Ok(DVector::from_column_slice(r))
        })
        .collect()
}

fn check_version(v: u32) -> Result<()> {
    if v == FORMAT_VERSION {
        Ok(())
    } else {
        Err(Error::Format(format!("unsupported format_version {v} (expected {FORMAT_VERSION})")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSetFile {
    pub format_version: u32,
    pub dim: usize,
    pub xs: Vec<Vec<f64>>,
    pub ys: Vec<Vec<f64>>,
    #[serde(default)]
    pub meta: DataSetMeta,
}

impl From<&DataSet> for DataSetFile {
    fn from(d: &DataSet) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            dim: d.dim,
            xs: to_rows(&d.xs),
            ys: to_rows(&d.ys),
            meta: d.meta.clone(),
        }
    }
}

impl DataSetFile {
    pub fn into_dataset(self) -> Result<DataSet> {
        check_version(self.format_version)?;
        DataSet::new(
            self.dim,
            from_rows(self.dim, &self.xs)?,
            from_rows(self.dim, &self.ys)?,
            self.meta,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFile {
    pub format_version: u32,
    pub dim: usize,
    pub points: Vec<Vec<f64>>,
}

impl From<&GridSet> for GridFile {
    fn from(g: &GridSet) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            dim: g.dim,
            points: to_rows(&g.points),
        }
    }
}

impl GridFile {
    pub fn into_grid(self) -> Result<GridSet> {
        check_version(self.format_version)?;
        GridSet::new(self.dim, from_rows(self.dim, &self.points)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentersFile {
    pub data: Vec<Vec<f64>>,
    pub grid: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub kernel: KernelSpec,
    pub dim: usize,
    pub centers: CentersFile,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "P")]
    pub p: Vec<Vec<f64>>,
    pub lambda: f64,
    pub diagnostics: Option<FitDiagnostics>,
}

impl From<&VectorFieldModel> for ModelFile {
    fn from(m: &VectorFieldModel) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            kernel: *m.kernel_spec(),
            dim: m.centers().dim(),
            centers: CentersFile {
                data: to_rows(m.centers().data_points()),
                grid: to_rows(m.centers().grid_points()),
            },
            a: matrix_to_rows(m.a()),
            p: matrix_to_rows(m.p()),
            lambda: m.lambda(),
            diagnostics: m.diagnostics().cloned(),
        }
    }
}

impl ModelFile {
    pub fn into_model(self) -> Result<VectorFieldModel> {
        check_version(self.format_version)?;
        let centers = Centers::new(
            self.dim,
            from_rows(self.dim, &self.centers.data)?,
            from_rows(self.dim, &self.centers.grid)?,
        )?;
        VectorFieldModel::new(
            self.kernel,
            centers,
            matrix_from_rows(&self.a),
            matrix_from_rows(&self.p),
            self.lambda,
            self.diagnostics,
        )
    }
}

pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let mut s = String::new();
    BufReader::new(File::open(path)?).read_to_string(&mut s)?;
    Ok(serde_json::from_str(&s)?)
}

pub fn write_dataset(path: &Path, d: &DataSet) -> Result<()> {
    write_json(path, &DataSetFile::from(d))
}

pub fn read_dataset(path: &Path) -> Result<DataSet> {
    read_json::<DataSetFile>(path)?.into_dataset()
}

pub fn write_grid(path: &Path, g: &GridSet) -> Result<()> {
    write_json(path, &GridFile::from(g))
}

pub fn read_grid(path: &Path) -> Result<GridSet> {
    read_json::<GridFile>(path)?.into_grid()
}

pub fn write_model(path: &Path, m: &VectorFieldModel) -> Result<()> {
    write_json(path, &ModelFile::from(m))
}

pub fn read_model(path: &Path) -> Result<VectorFieldModel> {
    read_json::<ModelFile>(path)?.into_model()
}

fn axis_header(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (1..=n).map(move |i| format!("{prefix}{i}"))
}

/// Columns `x1..xn, y1..yn`.
pub fn write_dataset_csv<W: Write>(out: W, d: &DataSet) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(axis_header("x", d.dim).chain(axis_header("y", d.dim)))?;
    for (x, y) in d.xs.iter().zip(&d.ys) {
        w.write_record(x.iter().chain(y.iter()).map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset_csv<R: Read>(input: R) -> Result<DataSet> {
    let mut r = csv::Reader::from_reader(input);
    let width = r.headers()?.len();
    if width == 0 || width % 2 != 0 {
        return Err(Error::Format(format!("data set CSV needs 2n columns, got {width}")));
    }
    let dim = width / 2;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for rec in r.records() {
        let vals: Vec<f64> = rec?
            .iter()
            .map(|s| s.trim().parse().map_err(|_| Error::Format(format!("bad number `{s}`"))))
            .collect::<Result<_>>()?;
        xs.push(DVector::from_column_slice(&vals[..dim]));
        ys.push(DVector::from_column_slice(&vals[dim..]));
    }
    DataSet::new(dim, xs, ys, DataSetMeta::default())
}

/// Columns `x1..xn`.
pub fn write_grid_csv<W: Write>(out: W, g: &GridSet) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(axis_header("x", g.dim))?;
    for z in &g.points {
        w.write_record(z.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Columns `t, x1..xn`.
pub fn write_trajectory_csv<W: Write>(out: W, t: &Trajectory) -> Result<()> {
    let n = t.states.first().map_or(0, |s| s.len());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(std::iter::once("t".to_string()).chain(axis_header("x", n)))?;
    for (time, x) in t.times.iter().zip(&t.states) {
        w.write_record(std::iter::once(time).chain(x.iter()).map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Columns `x1..xn, f1..fn` (model values only), or with truth
/// `x1..xn, f1..fn, true1..truen, res1..resn`.
pub fn write_lattice_csv<W: Write>(out: W, vals: &LatticeValues, with_truth: bool) -> Result<()> {
    let n = vals.points.first().map_or(0, |p| p.len());
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = axis_header("x", n).chain(axis_header("f", n)).collect();
    if with_truth {
        header.extend(axis_header("true", n));
        header.extend(axis_header("res", n));
    }
    w.write_record(&header)?;
    for ((x, f), t) in vals.points.iter().zip(&vals.model).zip(&vals.truth) {
        let mut row: Vec<f64> = x.iter().chain(f.iter()).copied().collect();
        if with_truth {
            row.extend(t.iter());
            row.extend((t - f).iter());
        }
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
