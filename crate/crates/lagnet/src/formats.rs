//! On-disk formats: datasets, checkpoints, field snapshots, reports.
//!
//! Doubles in CSV files are written with 17 significant digits. JSON files
//! use the shortest representation that parses back to the same bits.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use lagnet_core::gridlag::{Boundary, DensityNet, GridField, GridLagrangian, StencilSet};
use lagnet_core::refsys::{SamplerRanges, Trajectory};
use lagnet_core::trainer::{DynamicsModel, GridModel};
use lagnet_core::{Lagrangian, Mlp, PhaseState, ReferenceSystem};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const FORMAT_VERSION: u32 = 1;
pub const DATASET_FILE: &str = "dataset.csv";
pub const DATASET_META_FILE: &str = "dataset.meta.json";

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `bytes` to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(|e| CliError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| CliError::io(&tmp, e))?;
    f.sync_all().map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut s = serde_json::to_string_pretty(value).expect("serializable value");
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

/// Sidecar describing how a dataset was generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub format_version: u32,
    pub system: String,
    pub d: usize,
    pub h: f64,
    pub steps: usize,
    pub count: usize,
    pub seed: u64,
    pub sampler: SamplerRanges,
    pub constants: ReferenceSystem,
}

fn dataset_header(d: usize) -> String {
    let mut cols = vec!["traj".to_string(), "t".to_string()];
    cols.extend((0..d).map(|i| format!("q{i}")));
    cols.extend((0..d).map(|i| format!("qd{i}")));
    cols.extend((0..d).map(|i| format!("a{i}")));
    cols.join(",")
}

pub fn dataset_csv(trajs: &[Trajectory]) -> String {
    let d = trajs.first().map_or(0, Trajectory::dof);
    let mut out = dataset_header(d);
    out.push('\n');
    for (k, tr) in trajs.iter().enumerate() {
        for ((t, s), a) in tr.times.iter().zip(&tr.states).zip(&tr.accels) {
            write!(out, "{k},{}", fmt_f64(*t)).unwrap();
            for v in s.q.iter().chain(&s.q_dot).chain(a) {
                write!(out, ",{}", fmt_f64(*v)).unwrap();
            }
            out.push('\n');
        }
    }
    out
}

/// A dataset read back from disk.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub path: PathBuf,
    pub meta: Option<DatasetMeta>,
    pub trajectories: Vec<Trajectory>,
}

impl LoadedDataset {
    pub fn dof(&self) -> usize {
        self.trajectories.first().map_or(0, Trajectory::dof)
    }

    pub fn system_name(&self) -> &str {
        self.meta.as_ref().map_or("unknown", |m| m.system.as_str())
    }
}

/// Accepts either a directory holding `dataset.csv` or the CSV itself. The
/// sidecar is read when present next to the CSV.
pub fn load_dataset(path: &Path) -> CliResult<LoadedDataset> {
    let csv_path = if path.is_dir() { path.join(DATASET_FILE) } else { path.to_path_buf() };
    let text = fs::read_to_string(&csv_path).map_err(|e| CliError::io(&csv_path, e))?;
    let trajectories = parse_dataset(&text).map_err(|e| CliError::usage(format!("{}: {e}", csv_path.display())))?;
    let meta_path = csv_path.with_file_name(DATASET_META_FILE);
    let meta = if meta_path.is_file() {
        let m: DatasetMeta = read_json(&meta_path)?;
        let d = trajectories.first().map_or(0, Trajectory::dof);
        if m.d != d {
            return Err(CliError::usage(format!(
                "{}: sidecar says d = {} but the data has {d} coordinates",
                meta_path.display(),
                m.d
            )));
        }
        Some(m)
    } else {
        None
    };
    Ok(LoadedDataset {
        path: csv_path,
        meta,
        trajectories,
    })
}

/// Parses dataset CSV text into trajectories. Errors name the 1-based line.
pub fn parse_dataset(text: &str) -> Result<Vec<Trajectory>, String> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut records = rdr.records();
    let header = match records.next() {
        Some(r) => r.map_err(|e| format!("line 1: {e}"))?,
        None => return Err("empty file, expected a header".into()),
    };
    let width = header.len();
    if width < 5 || (width - 2) % 3 != 0 {
        return Err(format!("line 1: malformed header with {width} columns"));
    }
    let d = (width - 2) / 3;
    let expected = dataset_header(d);
    let got: Vec<&str> = header.iter().map(str::trim).collect();
    if got.join(",") != expected {
        return Err(format!("line 1: expected header `{expected}`"));
    }

    let mut trajs: Vec<Trajectory> = Vec::new();
    let mut last_id: Option<usize> = None;
    for rec in records {
        let rec = rec.map_err(|e| format!("{e}"))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != width {
            return Err(format!("line {line}: expected {width} fields, got {}", rec.len()));
        }
        let id: usize = rec[0]
            .trim()
            .parse()
            .map_err(|_| format!("line {line}: bad trajectory id `{}`", &rec[0]))?;
        let mut vals = Vec::with_capacity(width - 1);
        for (c, field) in rec.iter().enumerate().skip(1) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| format!("line {line}: bad number `{field}` in column {}", c + 1))?;
            if !v.is_finite() {
                return Err(format!("line {line}: non-finite value in column {}", c + 1));
            }
            vals.push(v);
        }
        match last_id {
            Some(prev) if id == prev => {}
            Some(prev) if id != prev + 1 => {
                return Err(format!("line {line}: trajectory id {id} does not follow {prev}"));
            }
            None if id != 0 => return Err(format!("line {line}: trajectory ids must start at 0")),
            _ => trajs.push(Trajectory {
                system: String::new(),
                seed: 0,
                h: 0.0,
                times: Vec::new(),
                states: Vec::new(),
                accels: Vec::new(),
            }),
        }
        last_id = Some(id);
        let tr = trajs.last_mut().expect("pushed above");
        tr.times.push(vals[0]);
        tr.states.push(PhaseState {
            q: vals[1..1 + d].to_vec(),
            q_dot: vals[1 + d..1 + 2 * d].to_vec(),
        });
        tr.accels.push(vals[1 + 2 * d..].to_vec());
    }
    if trajs.is_empty() {
        return Err("no data rows".into());
    }
    for (k, tr) in trajs.iter_mut().enumerate() {
        if tr.times.len() >= 2 {
            tr.h = tr.times[1] - tr.times[0];
        }
        if tr.times.len() >= 2 && !(tr.h > 0.0) {
            return Err(format!("trajectory {k}: times must increase"));
        }
    }
    Ok(trajs)
}

/// Which kind of network a checkpoint holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    /// One network `L(q, q̇)` over the whole state.
    Lagrangian,
    /// A per-site density shared over a periodic lattice with
    /// nearest-neighbour stencils.
    LatticeDensity { sites: usize, dx: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub model: ModelKind,
    pub network: Mlp,
    pub flat_parameters: Vec<f64>,
    pub seed: u64,
    #[serde(default)]
    pub system: Option<String>,
    #[serde(default)]
    pub epoch: usize,
}

impl Checkpoint {
    pub fn load(path: &Path) -> CliResult<Self> {
        let c: Checkpoint = read_json(path)?;
        if c.format_version != FORMAT_VERSION {
            return Err(CliError::usage(format!(
                "{}: unsupported checkpoint format_version {}",
                path.display(),
                c.format_version
            )));
        }
        let model = c.model()?;
        if c.flat_parameters.len() != model.param_count() {
            return Err(CliError::usage(format!(
                "{}: network needs {} parameters, file has {}",
                path.display(),
                model.param_count(),
                c.flat_parameters.len()
            )));
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        write_json(path, self)
    }

    pub fn model(&self) -> CliResult<Model> {
        Model::build(&self.model, self.network.clone())
    }
}

/// A network ready for prediction, training and rollouts.
#[derive(Debug, Clone)]
pub enum Model {
    Lagrangian(Mlp),
    Lattice(GridModel),
}

impl Model {
    pub fn build(kind: &ModelKind, mlp: Mlp) -> CliResult<Self> {
        Ok(match kind {
            ModelKind::Lagrangian => {
                if mlp.config.input_dim % 2 != 0 {
                    return Err(CliError::usage(format!(
                        "a Lagrangian network needs an even input dimension, got {}",
                        mlp.config.input_dim
                    )));
                }
                Model::Lagrangian(mlp)
            }
            ModelKind::LatticeDensity { sites, dx } => {
                let stencils = StencilSet::nearest_neighbor(*sites);
                let net = DensityNet::new(mlp)?;
                GridField::new(vec![0.0; *sites], vec![0.0; *sites], *dx)?;
                GridLagrangian::new(net.bind(&vec![0.0; net.mlp.param_count()])?, *sites, *dx, &stencils)?;
                Model::Lattice(GridModel {
                    net,
                    stencils,
                    dx: *dx,
                })
            }
        })
    }

    pub fn dynamics(&self) -> &dyn DynamicsModel {
        match self {
            Model::Lagrangian(m) => m,
            Model::Lattice(g) => g,
        }
    }

    pub fn dof(&self) -> usize {
        self.dynamics().dof()
    }

    pub fn param_count(&self) -> usize {
        self.dynamics().param_count()
    }

    /// Runs `f` on the learned Lagrangian bound to `params`.
    pub fn with_lagrangian<R>(&self, params: &[f64], f: impl FnOnce(&dyn ErasedLagrangian) -> R) -> CliResult<R> {
        Ok(match self {
            Model::Lagrangian(m) => f(&m.bind(params)?),
            Model::Lattice(g) => {
                let l = GridLagrangian::new(g.net.bind(params)?, g.stencils.sites.len(), g.dx, &g.stencils)?;
                f(&l)
            }
        })
    }
}

/// Object-safe view of the operations commands need from a Lagrangian.
pub trait ErasedLagrangian {
    fn rollout(&self, initial: &PhaseState, h: f64, steps: usize) -> lagnet_core::Result<lagnet_core::refsys::Rollout>;
    fn energy(&self, state: &PhaseState) -> lagnet_core::Result<f64>;
}

impl<L: Lagrangian> ErasedLagrangian for L {
    fn rollout(&self, initial: &PhaseState, h: f64, steps: usize) -> lagnet_core::Result<lagnet_core::refsys::Rollout> {
        lagnet_core::refsys::rollout(self, initial, h, steps)
    }

    fn energy(&self, state: &PhaseState) -> lagnet_core::Result<f64> {
        lagnet_core::eldyn::learned_energy(self, state)
    }
}

/// Sidecar of a field snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldMeta {
    pub n: usize,
    pub dx: f64,
    pub boundary: Boundary,
}

pub fn field_meta_path(csv: &Path) -> PathBuf {
    let mut p = csv.as_os_str().to_owned();
    p.push(".meta.json");
    PathBuf::from(p)
}

pub fn save_field(path: &Path, field: &GridField) -> CliResult<()> {
    let mut out = String::from("site,phi,phi_dot\n");
    for (i, (p, v)) in field.phi.iter().zip(&field.phi_dot).enumerate() {
        writeln!(out, "{i},{},{}", fmt_f64(*p), fmt_f64(*v)).unwrap();
    }
    write_atomic(path, out.as_bytes())?;
    write_json(
        &field_meta_path(path),
        &FieldMeta {
            n: field.sites(),
            dx: field.dx,
            boundary: field.boundary,
        },
    )
}

pub fn load_field(path: &Path) -> CliResult<GridField> {
    let meta: FieldMeta = read_json(&field_meta_path(path))?;
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let bad = |msg: String| CliError::usage(format!("{}: {msg}", path.display()));
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "site,phi,phi_dot" => {}
        _ => return Err(bad("line 1: expected header `site,phi,phi_dot`".into())),
    }
    let mut phi = Vec::new();
    let mut phi_dot = Vec::new();
    for (k, line) in lines {
        let line_no = k + 1;
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 3 {
            return Err(bad(format!("line {line_no}: expected 3 fields, got {}", cols.len())));
        }
        let parse = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("line {line_no}: bad number `{s}`")));
        if cols[0] != phi.len().to_string() {
            return Err(bad(format!("line {line_no}: expected site {}", phi.len())));
        }
        phi.push(parse(cols[1])?);
        phi_dot.push(parse(cols[2])?);
    }
    if phi.len() != meta.n {
        return Err(bad(format!("sidecar says n = {} but the file has {} sites", meta.n, phi.len())));
    }
    let mut field = GridField::new(phi, phi_dot, meta.dx)?;
    field.boundary = meta.boundary;
    Ok(field)
}
