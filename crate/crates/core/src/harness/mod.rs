//! Scenario orchestration, artifacts and run manifests.

pub mod config;
pub mod fields;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cellsolve::{
    corrector_diagnostics, solve_lake_corrector, solve_stiff_corrector, CorrectorSolution,
};
use crate::efftensor::{
    duality_check, eigenvalues, homogenized_tensor_lake, homogenized_tensor_stiff, EffectiveTensors,
};
use crate::epsbench::{convergence_table, StudyOptions};
use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField};
use crate::harmcoord::{build_map, direction_fan, direction_speed_min, jacobian_analysis};
use crate::macroflow::{
    self, HomogenizedModel, MacroSolver, MacroState, MacroVariant, RunHooks, CFL_LIMIT,
};
use crate::microflow::{
    cell_velocity, free_start_points, free_volume_density, invariant_residual, max_dt,
    rotation_and_birkhoff, Observable,
};
use crate::microgeom::{
    build_depth_field, sample_random_hardcore, Microstructure, DEFAULT_MAX_ATTEMPTS,
};

pub use config::{load_config, parse_config, ScenarioConfig, ScenarioKind};
pub use fields::{read_field, write_field, Field};

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST_NAME: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the output directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub kind: ScenarioKind,
    pub name: Option<String>,
    pub config_hash: String,
    pub toolkit_version: String,
    pub seed: u64,
    pub artifacts: Vec<Artifact>,
    /// Wall-clock seconds per phase.
    pub timings: BTreeMap<String, f64>,
    /// Headline scalars for reports.
    pub summary: BTreeMap<String, f64>,
    /// Acceptance-relevant failures; empty on success.
    pub failures: Vec<String>,
}

impl RunManifest {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn checksums(&self) -> BTreeMap<String, String> {
        self.artifacts
            .iter()
            .map(|a| (a.path.clone(), a.sha256.clone()))
            .collect()
    }
}

/// A CSV table with a units-annotated header, written through the `csv` crate.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push<I: IntoIterator<Item = String>>(&mut self, row: I) {
        self.rows.push(row.into_iter().collect());
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn quantity_table(rows: &[(&str, &str, f64)]) -> Table {
    let mut t = Table::new(&["quantity", "unit", "value"]);
    for (q, u, v) in rows {
        t.push([q.to_string(), u.to_string(), num(*v)]);
    }
    t
}

fn tensor_rows(t: &mut Table, name: &str, m: &Matrix2<f64>) {
    for (i, j) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
        t.push([
            format!("{name}_{}{}", i + 1, j + 1),
            "1".into(),
            num(m[(i, j)]),
        ]);
    }
}

/// Collects artifacts of one run in its output directory.
pub struct ArtifactWriter {
    dir: PathBuf,
    artifacts: Vec<Artifact>,
}

impl ArtifactWriter {
    pub fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            artifacts: Vec::new(),
        })
    }

    pub fn bytes(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.artifacts.push(Artifact {
            path: name.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        });
        Ok(path)
    }

    pub fn table(&mut self, name: &str, t: &Table) -> Result<PathBuf> {
        self.bytes(name, &t.to_bytes())
    }

    pub fn field(&mut self, name: &str, f: Field) -> Result<PathBuf> {
        self.bytes(name, &fields::encode(&f))
    }

    pub fn json<T: Serialize>(&mut self, name: &str, v: &T) -> Result<PathBuf> {
        let text = serde_json::to_string_pretty(v).expect("serializable");
        self.bytes(name, text.as_bytes())
    }

    pub fn into_artifacts(self) -> Vec<Artifact> {
        self.artifacts
    }
}

/// Restart data of a macroscopic state: `<stem>.h2df` plus `<stem>.json`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateSidecar {
    pub t: f64,
    pub steps: usize,
}

pub fn save_macro_state(w: &mut ArtifactWriter, stem: &str, state: &MacroState) -> Result<()> {
    w.field(&format!("{stem}.h2df"), Field::Scalar(state.w.clone()))?;
    w.json(
        &format!("{stem}.json"),
        &StateSidecar {
            t: state.t,
            steps: state.steps,
        },
    )?;
    Ok(())
}

/// Loads a state from its `.json` sidecar and the sibling `.h2df` field.
pub fn load_macro_state(sidecar: &Path) -> Result<MacroState> {
    let text = std::fs::read_to_string(sidecar).map_err(|e| Error::io(sidecar, e))?;
    let meta: StateSidecar = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("state sidecar {}: {e}", sidecar.display())))?;
    let w = read_field(&sidecar.with_extension("h2df"))?.into_scalar()?;
    let mut state = MacroState::new(w)?;
    state.t = meta.t;
    state.steps = meta.steps;
    Ok(state)
}

fn microstructure(cfg: &ScenarioConfig) -> Result<Option<Microstructure>> {
    use config::GeometryConfig as G;
    Ok(match &cfg.geometry {
        None => None,
        Some(G::Explicit { microstructure }) => Some(microstructure.clone()),
        Some(G::Disk { fraction, hardcore }) => {
            Some(Microstructure::disk_with_fraction(*fraction, *hardcore))
        }
        Some(G::Random {
            fraction,
            hardcore,
            radius,
        }) => Some(
            sample_random_hardcore(
                cfg.seed,
                *fraction,
                *hardcore,
                *radius,
                DEFAULT_MAX_ATTEMPTS,
            )?
            .microstructure,
        ),
    })
}

struct Cell {
    sol: CorrectorSolution,
    depth: Option<ScalarField>,
    tensors: EffectiveTensors,
}

fn solve_cell(cfg: &ScenarioConfig) -> Result<Cell> {
    if let Some(ms) = microstructure(cfg)? {
        let sol = solve_stiff_corrector(&ms, cfg.n, &cfg.k_ladder, cfg.tol)?;
        let tensors = homogenized_tensor_stiff(&sol)?;
        Ok(Cell {
            sol,
            depth: None,
            tensors,
        })
    } else if let Some(spec) = &cfg.depth {
        let b = build_depth_field(spec, cfg.n)?;
        let sol = solve_lake_corrector(&b, cfg.tol)?;
        let tensors = homogenized_tensor_lake(&b, &sol)?;
        Ok(Cell {
            sol,
            depth: Some(b),
            tensors,
        })
    } else {
        Err(Error::Config(vec![
            "scenario needs a geometry or a depth".into()
        ]))
    }
}

fn tensor_table(t: &EffectiveTensors) -> Table {
    let mut tab = Table::new(&["quantity", "unit", "value"]);
    tensor_rows(&mut tab, "a_bar", &t.a_bar);
    let derived = if t.b0.is_some() { "b_bar" } else { "m_bar" };
    tensor_rows(&mut tab, derived, &t.derived);
    let ev = eigenvalues(&t.a_bar);
    for (q, v) in [
        ("eigenvalue_min", ev[0]),
        ("eigenvalue_max", ev[1]),
        ("formula_gap", t.formula_gap),
        ("galerkin_gap", t.galerkin_gap),
        ("asymmetry", t.asymmetry),
    ] {
        tab.push([q.into(), "1".into(), num(v)]);
    }
    if let Some(l) = t.lambda {
        tab.push(["volume_fraction".into(), "1".into(), num(l)]);
    }
    if let Some(b0) = t.b0 {
        tab.push(["b0".into(), "depth".into(), num(b0)]);
    }
    if let Some(d) = &t.dilute {
        tensor_rows(&mut tab, "dilute", &d.prediction);
        tab.push(["dilute_gap".into(), "1".into(), num(d.gap)]);
    }
    tab
}

type Summary = BTreeMap<String, f64>;

fn scenario_cell(
    cfg: &ScenarioConfig,
    w: &mut ArtifactWriter,
    summary: &mut Summary,
) -> Result<Vec<String>> {
    let cell = solve_cell(cfg)?;
    let sol = &cell.sol;
    w.field("phi1.h2df", Field::Scalar(sol.potential(0).clone()))?;
    w.field("phi2.h2df", Field::Scalar(sol.potential(1).clone()))?;
    if !sol.ladder.is_empty() {
        let mut t = Table::new(&[
            "K [1]",
            "energy_e1 [1]",
            "energy_e2 [1]",
            "a11 [1]",
            "a12 [1]",
            "a21 [1]",
            "a22 [1]",
            "iterations_e1 [count]",
            "iterations_e2 [count]",
        ]);
        for s in &sol.ladder {
            t.push([
                num(s.k),
                num(s.energies[0]),
                num(s.energies[1]),
                num(s.tensor[(0, 0)]),
                num(s.tensor[(0, 1)]),
                num(s.tensor[(1, 0)]),
                num(s.tensor[(1, 1)]),
                s.iterations[0].to_string(),
                s.iterations[1].to_string(),
            ]);
        }
        w.table("ladder.csv", &t)?;
    }
    let d = corrector_diagnostics(sol, sol.microstructure.as_ref());
    let mut rows = vec![
        ("harmonicity_e1", "1", d.harmonicity[0]),
        ("harmonicity_e2", "1", d.harmonicity[1]),
        ("gradient_rms_e1", "1", d.gradient_norm[0]),
        ("gradient_rms_e2", "1", d.gradient_norm[1]),
        ("mean_potential_e1", "1", d.mean_potential[0]),
        ("mean_potential_e2", "1", d.mean_potential[1]),
        (
            "iterations_e1",
            "count",
            sol.directions[0].stats.iterations as f64,
        ),
        (
            "iterations_e2",
            "count",
            sol.directions[1].stats.iterations as f64,
        ),
    ];
    if let Some(r) = d.rigidity {
        rows.push(("rigidity_e1", "1", r[0]));
        rows.push(("rigidity_e2", "1", r[1]));
    }
    w.table("diagnostics.csv", &quantity_table(&rows))?;
    w.table("tensor.csv", &tensor_table(&cell.tensors))?;
    summary.insert("a11".into(), cell.tensors.a_bar[(0, 0)]);
    summary.insert("a22".into(), cell.tensors.a_bar[(1, 1)]);
    Ok(Vec::new())
}

fn scenario_tensor(
    cfg: &ScenarioConfig,
    w: &mut ArtifactWriter,
    summary: &mut Summary,
) -> Result<Vec<String>> {
    let cell = solve_cell(cfg)?;
    let t = &cell.tensors;
    w.table("tensor.csv", &tensor_table(t))?;
    if !t.raw.is_empty() {
        let mut tab = Table::new(&["K [1]", "a11 [1]", "a12 [1]", "a21 [1]", "a22 [1]"]);
        for (k, m) in &t.raw {
            tab.push([
                num(*k),
                num(m[(0, 0)]),
                num(m[(0, 1)]),
                num(m[(1, 0)]),
                num(m[(1, 1)]),
            ]);
        }
        w.table("ladder_tensors.csv", &tab)?;
    }
    if let Some(b) = &cell.depth {
        let d = duality_check(b, cfg.tol)?;
        let mut tab = Table::new(&["quantity", "unit", "value"]);
        tensor_rows(&mut tab, "direct", &d.direct);
        tensor_rows(&mut tab, "dual", &d.dual);
        tab.push(["gap".into(), "1".into(), num(d.gap)]);
        w.table("duality.csv", &tab)?;
        summary.insert("duality_gap".into(), d.gap);
    }
    summary.insert("a11".into(), t.a_bar[(0, 0)]);
    summary.insert("a22".into(), t.a_bar[(1, 1)]);
    summary.insert("formula_gap".into(), t.formula_gap);
    if let Some(d) = &t.dilute {
        summary.insert("dilute_gap".into(), d.gap);
    }
    Ok(Vec::new())
}

fn scenario_coord(
    cfg: &ScenarioConfig,
    w: &mut ArtifactWriter,
    summary: &mut Summary,
) -> Result<Vec<String>> {
    let cell = solve_cell(cfg)?;
    let sol = &cell.sol;
    let c = &cfg.coord;
    let map = build_map(sol);
    let rep = jacobian_analysis(&map, c.erosion_cells)?;
    w.field("jacobian.h2df", Field::Scalar(map.jacobian.clone()))?;
    w.table(
        "jacobian.csv",
        &quantity_table(&[
            ("min_det", "1", rep.min_det),
            ("argmin_x", "length", rep.argmin[0]),
            ("argmin_y", "length", rep.argmin[1]),
            ("sign_changes", "count", rep.sign_changes as f64),
            ("mask_nodes", "count", rep.mask_nodes as f64),
            ("area_formula", "area", rep.area_formula),
            ("image_area", "area", rep.image_area),
            ("area_gap", "1", rep.area_gap),
        ]),
    )?;
    let mut speeds = Table::new(&[
        "angle [rad]",
        "e1 [1]",
        "e2 [1]",
        "min_speed [1]",
        "argmin_x [length]",
        "argmin_y [length]",
    ]);
    let mut min_speed = f64::INFINITY;
    for (k, e) in direction_fan(c.directions).into_iter().enumerate() {
        let s = direction_speed_min(sol, e, c.erosion_cells)?;
        min_speed = min_speed.min(s.min_speed);
        let angle = 2.0 * std::f64::consts::PI * k as f64 / c.directions as f64;
        speeds.push([
            num(angle),
            num(e[0]),
            num(e[1]),
            num(s.min_speed),
            num(s.argmin[0]),
            num(s.argmin[1]),
        ]);
    }
    w.table("speeds.csv", &speeds)?;
    summary.insert("min_det".into(), rep.min_det);
    summary.insert("area_gap".into(), rep.area_gap);
    summary.insert("min_speed".into(), min_speed);
    let mut failures = Vec::new();
    if rep.min_det <= 0.0 || rep.sign_changes > 0 {
        failures.push(format!(
            "Jacobian not positive: min det {} with {} sign changes",
            rep.min_det, rep.sign_changes
        ));
    }
    if rep.area_gap > 1e-2 {
        failures.push(format!("area-formula gap {} exceeds 1%", rep.area_gap));
    }
    if min_speed <= 0.0 {
        failures.push("cell velocity vanishes outside the inclusions".into());
    }
    Ok(failures)
}

fn scenario_micro(
    cfg: &ScenarioConfig,
    w: &mut ArtifactWriter,
    summary: &mut Summary,
) -> Result<Vec<String>> {
    let cell = solve_cell(cfg)?;
    let sol = &cell.sol;
    let c = &cfg.micro_flow;
    let observables = Observable::standard_set();
    let ms = sol.microstructure.as_ref();
    let starts = free_start_points(ms, c.trajectories, c.margin, cfg.seed);
    let mut ergodic = Table::new(&[
        "e1 [1]",
        "e2 [1]",
        "rotation_x [length/time]",
        "rotation_y [length/time]",
        "reference_x [length/time]",
        "reference_y [length/time]",
        "rotation_error [1]",
        "observable [index]",
        "birkhoff_mean [1]",
        "free_volume_mean [1]",
        "dispersion [1]",
        "trapped [count]",
    ]);
    let mut traj = Table::new(&[
        "direction [index]",
        "start_x [length]",
        "start_y [length]",
        "rotation_x [length/time]",
        "rotation_y [length/time]",
        "trapped [bool]",
    ]);
    let mut residuals = Table::new(&["e1 [1]", "e2 [1]", "density", "residual [1]"]);
    for (di, e) in c.directions.iter().enumerate() {
        let r = e[0].hypot(e[1]);
        let e = [e[0] / r, e[1] / r];
        let field = cell_velocity(sol, e)?;
        let dt = c.dt.unwrap_or_else(|| max_dt(&field));
        let rep = rotation_and_birkhoff(&field, &starts, c.t_end, dt, &observables)?;
        for (k, _) in observables.iter().enumerate() {
            ergodic.push([
                num(e[0]),
                num(e[1]),
                num(rep.mean_rotation[0]),
                num(rep.mean_rotation[1]),
                num(rep.reference_rotation[0]),
                num(rep.reference_rotation[1]),
                num(rep.rotation_error),
                k.to_string(),
                num(rep.mean_birkhoff[k]),
                num(rep.reference_birkhoff[k]),
                num(rep.dispersion[k]),
                rep.trapped.to_string(),
            ]);
        }
        for t in &rep.trajectories {
            traj.push([
                di.to_string(),
                num(t.start[0]),
                num(t.start[1]),
                num(t.rotation[0]),
                num(t.rotation[1]),
                t.trapped.to_string(),
            ]);
        }
        summary.insert(format!("rotation_error_{di}"), rep.rotation_error);
        summary.insert(
            format!("dispersion_{di}"),
            rep.dispersion.iter().fold(0.0f64, |m, v| m.max(*v)),
        );
        if let Some(ms) = ms {
            let mu = free_volume_density(ms, sol.grid);
            let res = invariant_residual(&mu, &field)?;
            residuals.push([num(e[0]), num(e[1]), "free-volume".into(), num(res)]);
            summary.insert(format!("invariant_residual_{di}"), res);
        }
    }
    w.table("ergodic.csv", &ergodic)?;
    w.table("trajectories.csv", &traj)?;
    if ms.is_some() {
        w.table("invariant.csv", &residuals)?;
    }
    Ok(Vec::new())
}

fn macro_model(cfg: &ScenarioConfig) -> Result<HomogenizedModel> {
    let c = &cfg.macro_flow;
    if let (Some(a), Some(d)) = (c.a_bar, c.transport_divisor) {
        let m = Matrix2::new(a[0][0], a[0][1], a[1][0], a[1][1]);
        return HomogenizedModel::new(c.variant.unwrap_or(MacroVariant::Inclusions), m, d);
    }
    let cell = solve_cell(cfg)?;
    let t = &cell.tensors;
    match (t.lambda, t.b0) {
        (_, Some(b0)) => HomogenizedModel::lake(t.a_bar, b0),
        (Some(l), None) => HomogenizedModel::inclusions(t.a_bar, l),
        (None, None) => Err(Error::Assembly(
            "effective tensors carry neither λ nor b₀".into(),
        )),
    }
}

fn scenario_macro(
    cfg: &ScenarioConfig,
    w: &mut ArtifactWriter,
    summary: &mut Summary,
) -> Result<Vec<String>> {
    let c = &cfg.macro_flow;
    let model = macro_model(cfg)?;
    let grid = Grid::new(c.m, c.length)?;
    let solver = MacroSolver::new(grid, model)?;
    let state = match &c.restart {
        Some(p) => {
            let s = load_macro_state(p)?;
            if s.w.grid != grid {
                return Err(Error::MacroState(format!(
                    "restart state {} does not match the grid",
                    p.display()
                )));
            }
            s
        }
        None => {
            let w0 = macroflow::random_smooth_vorticity(grid, cfg.seed, c.kmax, c.amplitude);
            MacroState::new(solver.dealias(&w0))?
        }
    };
    save_macro_state(w, "state_initial", &state)?;
    let dt = match c.dt {
        Some(dt) => dt,
        None => {
            let umax = solver.max_transport_speed(&state.w);
            if umax > 0.0 {
                0.5 * CFL_LIMIT * grid.h() / umax
            } else {
                (c.t_end - state.t).max(1.0)
            }
        }
    };
    let hooks = RunHooks {
        diagnostics_every: c.diagnostics_every,
        dump_every: c.dump_every,
    };
    let out = macroflow::run_from(&solver, state, c.t_end, dt, &c.forcing, hooks)?;
    let mut t = Table::new(&[
        "t [time]",
        "energy [length^2/time^2]",
        "circulation [length^2/time]",
        "enstrophy [length^2/time^2]",
        "max_abs_w [1/time]",
    ]);
    for d in &out.diagnostics {
        t.push([
            num(d.t),
            num(d.energy),
            num(d.circulation),
            num(d.enstrophy),
            num(d.max_abs),
        ]);
    }
    w.table("diagnostics.csv", &t)?;
    for s in &out.dumps {
        w.field(
            &format!("w_{:06}.h2df", s.steps),
            Field::Scalar(s.w.clone()),
        )?;
    }
    save_macro_state(w, "state_final", &out.state)?;
    let vel = solver.deformed_biot_savart(&out.state.w)?;
    w.field("u_final.h2df", Field::Vector(vel.u))?;
    let (a, b) = (
        out.diagnostics[0],
        *out.diagnostics.last().expect("non-empty"),
    );
    let rel = |x: f64, y: f64| {
        if x == 0.0 {
            (y - x).abs()
        } else {
            (y - x).abs() / x.abs()
        }
    };
    summary.insert("energy_drift".into(), rel(a.energy, b.energy));
    summary.insert("enstrophy_drift".into(), rel(a.enstrophy, b.enstrophy));
    summary.insert(
        "circulation_drift".into(),
        (b.circulation - a.circulation).abs(),
    );
    summary.insert("dt".into(), dt);
    let mut failures = Vec::new();
    if c.forcing.is_zero()
        && (b.circulation - a.circulation).abs() > 1e-12 * a.enstrophy.sqrt().max(1.0)
    {
        failures.push(format!(
            "circulation drifted by {:e}",
            (b.circulation - a.circulation).abs()
        ));
    }
    Ok(failures)
}

fn scenario_eps(
    cfg: &ScenarioConfig,
    w: &mut ArtifactWriter,
    summary: &mut Summary,
    timings: &mut Summary,
) -> Result<Vec<String>> {
    let c = &cfg.eps_study;
    let spec = cfg
        .depth
        .as_ref()
        .ok_or_else(|| Error::Config(vec!["eps-study needs a depth".into()]))?;
    let grid = Grid::unit(c.m)?;
    let w0 = macroflow::random_smooth_vorticity(grid, cfg.seed, c.kmax, c.amplitude);
    let opts = StudyOptions {
        m: c.m,
        cell_n: cfg.n,
        t_end: c.t_end,
        dt: c.dt,
        tol: cfg.tol,
    };
    let table = convergence_table(spec, &c.eps, &w0, opts)?;
    let mut t = Table::new(&[
        "eps [1]",
        "M [nodes]",
        "error_vorticity [L2]",
        "error_momentum [L2]",
        "reconstruction_defect [L2]",
        "velocity_norm [L2]",
        "pv_growth [1]",
        "circulation_drift [1]",
        "elliptic_iterations [count]",
    ]);
    for r in &table.rows {
        t.push([
            num(r.eps),
            r.m.to_string(),
            num(r.vorticity),
            num(r.momentum),
            num(r.reconstruction),
            num(r.velocity_norm),
            num(r.pv_growth),
            num(r.circulation_drift),
            r.elliptic_iterations.to_string(),
        ]);
        timings.insert(format!("eps_{}", r.eps), r.runtime);
    }
    w.table("error_table.csv", &t)?;
    let mut tab = Table::new(&["quantity", "unit", "value"]);
    tensor_rows(&mut tab, "a_bar", &table.a_bar);
    tensor_rows(&mut tab, "b_bar", &table.b_bar);
    tab.push(["b0".into(), "depth".into(), num(table.b0)]);
    w.table("tensor.csv", &tab)?;
    if let Some(last) = table.rows.last() {
        summary.insert("error_vorticity_finest".into(), last.vorticity);
        summary.insert("error_momentum_finest".into(), last.momentum);
        summary.insert("reconstruction_finest".into(), last.reconstruction);
    }
    Ok(table
        .non_monotone()
        .into_iter()
        .map(|c| format!("column {c} is not strictly decreasing in 1/ε"))
        .collect())
}

/// Runs a validated scenario, writing artifacts and `manifest.json` into
/// `out` (or the configured output directory).
pub fn run_scenario(cfg: &ScenarioConfig, out: Option<&Path>) -> Result<RunManifest> {
    let violations = cfg.violations();
    if !violations.is_empty() {
        return Err(Error::Config(violations));
    }
    let dir = out
        .map(Path::to_path_buf)
        .or_else(|| cfg.output.clone())
        .ok_or_else(|| Error::Config(vec!["no output directory".into()]))?;
    let clock = Instant::now();
    let mut w = ArtifactWriter::new(&dir)?;
    w.bytes("config.json", cfg.canonical_json().as_bytes())?;
    let mut summary = Summary::new();
    let mut timings = Summary::new();
    let context = |e: Error| match e {
        Error::Config(_) => e,
        other => Error::Study(format!("{} scenario failed: {other}", cfg.kind.as_str())),
    };
    let failures = match cfg.kind {
        ScenarioKind::Cell => scenario_cell(cfg, &mut w, &mut summary),
        ScenarioKind::Tensor => scenario_tensor(cfg, &mut w, &mut summary),
        ScenarioKind::Coord => scenario_coord(cfg, &mut w, &mut summary),
        ScenarioKind::MicroFlow => scenario_micro(cfg, &mut w, &mut summary),
        ScenarioKind::MacroFlow => scenario_macro(cfg, &mut w, &mut summary),
        ScenarioKind::EpsStudy => scenario_eps(cfg, &mut w, &mut summary, &mut timings),
    }
    .map_err(context)?;
    timings.insert("total".into(), clock.elapsed().as_secs_f64());
    let manifest = RunManifest {
        kind: cfg.kind,
        name: cfg.name.clone(),
        config_hash: sha256_hex(cfg.canonical_json().as_bytes()),
        toolkit_version: TOOLKIT_VERSION.to_string(),
        seed: cfg.seed,
        artifacts: w.into_artifacts(),
        timings,
        summary,
        failures,
    };
    let path = dir.join(MANIFEST_NAME);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("manifest {}: {e}", path.display())))
}

/// Manifests found in `dirs` (each a run directory or a parent of run
/// directories), sorted by path.
pub fn collect_manifests(dirs: &[PathBuf]) -> Result<Vec<(PathBuf, RunManifest)>> {
    let mut found = Vec::new();
    for d in dirs {
        let direct = d.join(MANIFEST_NAME);
        if direct.is_file() {
            found.push(direct);
            continue;
        }
        let entries = std::fs::read_dir(d).map_err(|e| Error::io(d, e))?;
        for entry in entries {
            let p = entry
                .map_err(|e| Error::io(d, e))?
                .path()
                .join(MANIFEST_NAME);
            if p.is_file() {
                found.push(p);
            }
        }
    }
    found.sort();
    found
        .into_iter()
        .map(|p| read_manifest(&p).map(|m| (p, m)))
        .collect()
}

/// Summary table over manifests: one row per run and summary key.
pub fn report(manifests: &[(PathBuf, RunManifest)]) -> Table {
    let mut t = Table::new(&[
        "run",
        "kind",
        "status",
        "config_hash",
        "artifacts [count]",
        "quantity",
        "value",
    ]);
    for (path, m) in manifests {
        let run = path
            .parent()
            .map(|p| p.display().to_string())
            .unwrap_or_default();
        let status = if m.passed() { "pass" } else { "fail" };
        let base = |q: String, v: String| {
            [
                run.clone(),
                m.kind.as_str().to_string(),
                status.to_string(),
                m.config_hash.clone(),
                m.artifacts.len().to_string(),
                q,
                v,
            ]
        };
        if m.summary.is_empty() {
            t.push(base(String::new(), String::new()));
        }
        for (k, v) in &m.summary {
            t.push(base(k.clone(), num(*v)));
        }
    }
    t
}
