//! Stage orchestration for the command line: runs the modules in dependency order,
//! caches artifacts under the configuration hash and writes the reports.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path as FsPath, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::basis::{fit_time_decay_or_exact, DecayFit, ModeBasis};
use crate::config::{Config, Direction, Stage};
use crate::diagonalization::{build_frame, check_symplectic_frame, local_frame_extrapolated, DiagFrame, LocalFrame};
use crate::error::{Error, Result};
use crate::evolution::{check_symplectic, kg_path, EvolutionOptions};
use crate::geometry::{check_positivity, reduce_to_model, verify_td_decay, End, ModelCoefficients, Reduction};
use crate::linalg::{eye, fro, CMat, C64};
use crate::microlocal::{make_wavepacket, propagation_test, PhasePoint, PropagationReport};
use crate::operator::{frac_power_quadrature, power_op, sqrt_op, DEFAULT_FLOOR};
use crate::report::num;
use crate::riccati::{riccati_report, solve_riccati, RiccatiSolution};
use crate::states::{
    hadamard_difference, reference_from_local, scattering_covariances, validate_state, vacuum_of, Covariances,
    Samples, Scattering, ScatteringOptions, StateTag,
};

pub const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "+", env!("HADAMARD_GIT_DESCRIBE"));

/// Window of the time-decay fits: [5, t_max] when the grid reaches past 5.
fn time_window(model: &ModelCoefficients) -> Option<(f64, f64)> {
    let hi = model.grid.t_max.min(-model.grid.t_min);
    (hi > 10.0).then_some((5.0, hi))
}

/// ‖a(t)^α − a_end^α‖ over the nodes on the side of `end`, fitted against ⟨t⟩.
pub fn end_power_decay(model: &ModelCoefficients, end: End, alpha: f64, window: (f64, f64)) -> Result<DecayFit> {
    let node = model.end(end);
    let target = power_op(&node.a, &node.weight, alpha, DEFAULT_FLOOR)?;
    let mut values = Vec::new();
    for i in 0..model.grid.n_nodes {
        let t = model.grid.node(i);
        let side = match end {
            End::Future => t > 0.0,
            End::Past => t < 0.0,
        };
        if side && t.abs() >= window.0 - 1e-12 && t.abs() <= window.1 + 1e-12 {
            let p = power_op(&model.a.mats[i], &model.weights[i], alpha, DEFAULT_FLOOR)?;
            values.push((t, fro(&(&p - &target))));
        }
    }
    fit_time_decay_or_exact(&values, window, 1e-12 * fro(&target))
}

/// Writes a matrix as CSV, row-major, each entry as a re,im pair of columns.
pub fn write_matrix_csv(path: &FsPath, m: &CMat) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(csv_err)?;
    for row in m.rows() {
        let rec: Vec<String> = row.iter().flat_map(|z| [z.re.to_string(), z.im.to_string()]).collect();
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix_csv(path: &FsPath) -> Result<CMat> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(path).map_err(csv_err)?;
    let mut rows: Vec<Vec<C64>> = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let vals: Vec<f64> = rec
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| Error::InvalidData(format!("{}: {e}", path.display()))))
            .collect::<Result<_>>()?;
        rows.push(vals.chunks(2).map(|p| C64::new(p[0], p[1])).collect());
    }
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != rows[0].len()) {
        return Err(Error::InvalidData(format!("{} is not a rectangular matrix", path.display())));
    }
    let m = rows[0].len();
    Ok(CMat::from_shape_fn((n, m), |(i, j)| rows[i][j]))
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidData(format!("csv: {e}"))
}

fn to_value<T: Serialize>(x: &T) -> Result<Value> {
    serde_json::to_value(x).map_err(|e| Error::InvalidData(e.to_string()))
}

/// Pipeline state: the configuration, the output locations and the lazily built artifacts.
pub struct Pipeline {
    pub cfg: Config,
    pub out: PathBuf,
    pub cache: PathBuf,
    log: fs::File,
    red: Option<Reduction>,
    model: Option<ModelCoefficients>,
    solution: Option<RiccatiSolution>,
    frame: Option<DiagFrame>,
    pub reports: BTreeMap<String, Value>,
}

impl Pipeline {
    pub fn new(cfg: Config, out: &FsPath) -> Result<Self> {
        cfg.validate()?;
        let cache = out.join("cache").join(cfg.hash());
        fs::create_dir_all(&cache)?;
        let log = fs::OpenOptions::new().create(true).append(true).open(out.join("run.log"))?;
        let mut p = Pipeline {
            cfg,
            out: out.to_path_buf(),
            cache,
            log,
            red: None,
            model: None,
            solution: None,
            frame: None,
            reports: BTreeMap::new(),
        };
        p.log(&format!("config {} ({}), version {VERSION}", p.cfg.name, p.cfg.hash()));
        Ok(p)
    }

    pub fn log(&mut self, msg: &str) {
        let _ = writeln!(self.log, "{msg}");
    }

    pub fn basis(&self) -> Result<ModeBasis> {
        ModeBasis::new(self.cfg.basis.k, self.cfg.spacetime.length)
    }

    pub fn reduction(&mut self) -> Result<&Reduction> {
        if self.red.is_none() {
            let g = self.cfg.grid;
            let (s_lo, s_hi) = self.sample_span()?;
            let span = (g.t_min.min(s_lo - 1.0), g.t_max.max(s_hi + 1.0));
            self.red = Some(Reduction::new(&self.cfg.spacetime, &self.basis()?, span)?);
        }
        Ok(self.red.as_ref().unwrap())
    }

    fn sample_span(&self) -> Result<(f64, f64)> {
        let s = Samples::parse(&self.cfg.states.samples)?;
        let m = &self.cfg.microlocal;
        let lo = (-s.stop).min(m.launch).min(m.launch + m.elapsed);
        let hi = s.stop.max(m.launch).max(m.launch + m.elapsed);
        Ok((lo, hi))
    }

    pub fn model(&mut self) -> Result<&ModelCoefficients> {
        if self.model.is_none() {
            let grid = self.cfg.grid;
            let m = reduce_to_model(self.reduction()?, &grid)?;
            self.model = Some(m);
        }
        Ok(self.model.as_ref().unwrap())
    }

    pub fn solution(&mut self) -> Result<&RiccatiSolution> {
        if self.solution.is_none() {
            let opts = self.cfg.riccati;
            let sol = solve_riccati(self.model()?, &opts)?;
            self.solution = Some(sol);
        }
        Ok(self.solution.as_ref().unwrap())
    }

    pub fn frame(&mut self) -> Result<&DiagFrame> {
        if self.frame.is_none() {
            self.solution()?;
            let f = build_frame(self.solution.as_ref().unwrap(), self.model.as_ref().unwrap())?;
            self.frame = Some(f);
        }
        Ok(self.frame.as_ref().unwrap())
    }

    fn evolution(&self) -> EvolutionOptions {
        EvolutionOptions::adaptive(self.cfg.tolerances.evolution_rtol)
    }

    fn cached_report(&self, stage: &str) -> Option<Value> {
        let text = fs::read_to_string(self.cache.join(format!("{stage}.json"))).ok()?;
        serde_json::from_str(&text).ok()
    }

    fn store_report(&mut self, stage: &str, v: Value) -> Result<()> {
        let text = serde_json::to_string_pretty(&v).map_err(|e| Error::InvalidData(e.to_string()))?;
        fs::write(self.cache.join(format!("{stage}.json")), text)?;
        self.reports.insert(stage.to_string(), v);
        Ok(())
    }

    /// Runs a stage unless its report is cached; returns the report.
    pub fn stage(&mut self, stage: Stage) -> Result<Value> {
        let name = stage.name();
        if let Some(v) = self.cached_report(name) {
            self.log(&format!("stage {name}: cached"));
            self.reports.insert(name.to_string(), v.clone());
            return Ok(v);
        }
        let start = Instant::now();
        let res = match stage {
            Stage::Reduce => self.run_reduce(),
            Stage::Powers => self.run_powers(),
            Stage::Riccati => self.run_riccati(),
            Stage::Frame => self.run_frame(),
            Stage::Evolve => self.run_evolve(),
            Stage::States => self.run_states(),
            Stage::Microlocal => self.run_microlocal(),
            Stage::Report => self.run_report(),
        };
        match res {
            Ok(v) => {
                self.log(&format!("stage {name}: done in {:.2} s", start.elapsed().as_secs_f64()));
                if stage != Stage::Report {
                    self.store_report(name, v.clone())?;
                }
                Ok(v)
            }
            Err(e) => {
                self.log(&format!("stage {name}: failed: {e}"));
                Err(Error::Stage { stage: name.to_string(), source: Box::new(e) })
            }
        }
    }

    /// Runs the requested stages in dependency order. The reduction always runs first
    /// since it checks positivity; upstream artifacts of later stages are built on demand.
    pub fn run(&mut self, stages: &[Stage]) -> Result<()> {
        for st in Stage::ALL {
            if st == Stage::Reduce || stages.contains(&st) {
                self.stage(st)?;
            }
        }
        Ok(())
    }

    fn run_reduce(&mut self) -> Result<Value> {
        let model = self.model()?;
        let m2 = check_positivity(model)?;
        let td = match time_window(model) {
            Some(w) => Some(verify_td_decay(model, w)?),
            None => None,
        };
        Ok(json!({
            "m2": num(m2),
            "self_adjoint_residual": num(model.self_adjoint_residual()),
            "rates": to_value(&model.rates)?,
            "td": to_value(&td)?,
        }))
    }

    fn run_powers(&mut self) -> Result<Value> {
        let model = self.model()?;
        let i0 = model.grid.nearest(0.0);
        let (a, w) = (&model.a.mats[i0], &model.weights[i0]);
        let eig = sqrt_op(a, w)?;
        let quad = frac_power_quadrature(a, w, 0.5, 128)?;
        let cross = fro(&(&quad - &eig)) / fro(&eig);
        let mut decay = BTreeMap::new();
        if let Some(win) = time_window(model) {
            for (label, end) in [("out", End::Future), ("in", End::Past)] {
                decay.insert(label, to_value(&end_power_decay(model, end, 0.5, win)?)?);
            }
        }
        Ok(json!({ "alpha": 0.5, "n_quad": 128, "eig_vs_quadrature": num(cross), "decay": decay }))
    }

    fn run_riccati(&mut self) -> Result<Value> {
        let window = self.cfg.window();
        let tol = self.cfg.tolerances.riccati_residual;
        self.solution()?;
        let model = self.model.as_ref().unwrap();
        let sol = self.solution.as_ref().unwrap();
        let rep = riccati_report(sol, model, window, time_window(model))?;
        let mut v = to_value(&rep)?;
        v["residual_tolerance"] = num(tol);
        Ok(v)
    }

    /// Reference covariances at the configured time, cached as CSV.
    pub fn reference(&mut self) -> Result<Covariances> {
        let s = self.cfg.states.clone();
        let ropts = self.cfg.riccati;
        let path = self.cache.join("c_ref_plus.csv");
        let red = self.reduction()?;
        let weight = red.weight_at(s.reference_time)?;
        if let Ok(plus) = read_matrix_csv(&path) {
            let minus = &eye(plus.nrows()) - &plus;
            return Ok(Covariances::new(plus, minus, weight, StateTag::Ref, s.reference_time));
        }
        let lf: LocalFrame =
            local_frame_extrapolated(red, s.reference_time, s.reference_dt, s.reference_levels, &ropts)?;
        let c = reference_from_local(&lf);
        write_matrix_csv(&path, &c.c_plus)?;
        Ok(c)
    }

    fn run_frame(&mut self) -> Result<Value> {
        let frame = self.frame()?;
        let symplectic = check_symplectic_frame(&frame.t, &frame.weights);
        let inverse = frame.inverse_defect();
        let hd = frame.hd_symmetry_defect();
        let c = self.reference()?;
        let basis = self.basis()?;
        let v = validate_state(&c, &basis)?;
        Ok(json!({
            "symplectic_residual": num(symplectic),
            "inverse_defect": num(inverse),
            "hd_symmetry_defect": num(hd),
            "reference": to_value(&v)?,
        }))
    }

    fn run_evolve(&mut self) -> Result<Value> {
        let g = self.cfg.grid;
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        let pairs: Vec<(f64, f64)> =
            (0..self.cfg.evolve.pairs).map(|_| (rng.random_range(g.t_min..g.t_max), rng.random_range(g.t_min..g.t_max))).collect();
        let mut stops: Vec<f64> = pairs.iter().flat_map(|&(t, s)| [t, s]).collect();
        stops.sort_by(f64::total_cmp);
        let opts = self.evolution();
        let red = self.reduction()?;
        let path = kg_path(red, 0.0, &stops, &opts)?;
        let mut rows = Vec::new();
        let mut worst = 0.0f64;
        for &(t, s) in &pairs {
            let u = path.between(t, s)?;
            let r = check_symplectic(&u, &red.weight_at(t)?.w, &red.weight_at(s)?.w);
            worst = worst.max(r);
            rows.push(json!({ "t": num(t), "s": num(s), "residual": num(r) }));
        }
        let tol = self.cfg.tolerances.symplectic;
        Ok(json!({ "rtol": num(opts.tol()), "pairs": rows, "max_residual": num(worst), "pass": worst <= tol }))
    }

    /// In or out covariances by the scattering construction, with the full trace.
    pub fn scattering(&mut self, direction: Direction, samples: &Samples) -> Result<Scattering> {
        let s = &self.cfg.states;
        let opts = ScatteringOptions {
            evolution: self.evolution(),
            riccati: self.cfg.riccati,
            local_dt: s.sample_dt,
            levels: s.sample_levels,
            floor: 1e-10,
        };
        let end = match direction {
            Direction::Out => End::Future,
            Direction::In => End::Past,
        };
        scattering_covariances(self.reduction()?, end, samples, &opts)
    }

    /// Covariances of the requested kind at time 0 (the reference time for ref).
    pub fn covariances(&mut self, which: StateTag) -> Result<Covariances> {
        match which {
            StateTag::Vac => {
                let red = self.reduction()?;
                vacuum_of(&red.asymptotic_node(End::Future)?, 0.0)
            }
            StateTag::Ref => self.reference(),
            StateTag::Out | StateTag::In => {
                let (dir, file) = if which == StateTag::Out {
                    (Direction::Out, "c_out_plus.csv")
                } else {
                    (Direction::In, "c_in_plus.csv")
                };
                let path = self.cache.join(file);
                let weight = self.reduction()?.weight_at(0.0)?;
                if let Ok(plus) = read_matrix_csv(&path) {
                    let minus = &eye(plus.nrows()) - &plus;
                    return Ok(Covariances::new(plus, minus, weight, which, 0.0));
                }
                let samples = Samples::parse(&self.cfg.states.samples)?;
                let sc = self.scattering(dir, &samples)?;
                write_matrix_csv(&path, &sc.covariances.c_plus)?;
                Ok(sc.covariances)
            }
        }
    }

    fn run_states(&mut self) -> Result<Value> {
        let basis = self.basis()?;
        let window = self.cfg.window();
        let p_threshold = self.cfg.states.p_threshold;
        let samples = Samples::parse(&self.cfg.states.samples)?;
        let mut out = BTreeMap::new();
        let reference = self.reference()?;
        for which in [StateTag::Vac, StateTag::Ref] {
            let c = self.covariances(which)?;
            out.insert(tag_name(which), json!({ "tag": to_value(&which)?, "residuals": to_value(&validate_state(&c, &basis)?)? }));
        }
        for dir in self.cfg.states.directions.clone() {
            let sc = self.scattering(dir, &samples)?;
            let file = match dir {
                Direction::Out => "c_out_plus.csv",
                Direction::In => "c_in_plus.csv",
            };
            write_matrix_csv(&self.cache.join(file), &sc.covariances.c_plus)?;
            self.write_trace(dir, &sc)?;
            let residuals = validate_state(&sc.covariances, &basis)?;
            let smoothing = if (reference.t_anchor - 0.0).abs() < 1e-12 {
                Some(hadamard_difference(&sc.covariances, &reference, &basis, window, p_threshold)?)
            } else {
                None
            };
            let trace = &sc.frame_trace;
            out.insert(
                tag_name(sc.covariances.tag),
                json!({
                    "tag": to_value(&sc.covariances.tag)?,
                    "residuals": to_value(&residuals)?,
                    "convergence": {
                        "gamma": trace.fit.as_ref().map(|f| num(f.exponent)),
                        "r_squared": trace.fit.as_ref().map(|f| num(f.r_squared)),
                        "samples": to_value(&trace.times)?,
                        "increments": to_value(&trace.increments.iter().map(|x| num(*x)).collect::<Vec<_>>())?,
                        "tail": num(trace.tail),
                        "vacuum_gamma": sc.vacuum_trace.fit.as_ref().map(|f| num(f.exponent)),
                        "vacuum_gap_gamma": sc.gap_fit.as_ref().map(|f| num(f.exponent)),
                    },
                    "smoothing": smoothing.as_ref().map(|h| json!({
                        "p_per_block": h.p_per_block.iter().map(|p| num(*p)).collect::<Vec<_>>(),
                        "r_squared": h.blocks.iter().map(|b| num(b.fit.r_squared)).collect::<Vec<_>>(),
                        "window": [h.window.0, h.window.1],
                        "norm": num(h.norm),
                        "pass": h.pass,
                    })),
                }),
            );
        }
        to_value(&out)
    }

    /// ConvergenceTrace CSV: t, increment (frame sequence), vacuum gap.
    pub fn write_trace(&self, dir: Direction, sc: &Scattering) -> Result<PathBuf> {
        let name = match dir {
            Direction::Out => "trace_out.csv",
            Direction::In => "trace_in.csv",
        };
        let path = self.out.join(name);
        let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
        w.write_record(["t", "increment", "vacuum_increment", "vacuum_gap"]).map_err(csv_err)?;
        for (j, t) in sc.frame_trace.times.iter().enumerate() {
            let inc = sc.frame_trace.increments.get(j).map(|x| x.to_string()).unwrap_or_default();
            let vinc = sc.vacuum_trace.increments.get(j).map(|x| x.to_string()).unwrap_or_default();
            w.write_record([t.to_string(), inc, vinc, sc.vacuum_gaps[j].1.to_string()]).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(path)
    }

    /// The configured wavepacket test; rows go to packet.csv.
    pub fn wavepacket(&mut self) -> Result<PropagationReport> {
        let m = self.cfg.microlocal.clone();
        let opts = self.evolution();
        let ropts = self.cfg.riccati;
        let red = self.reduction()?.clone();
        let lf = local_frame_extrapolated(&red, m.launch, 0.05, 1, &ropts)?;
        let wp = make_wavepacket(&red.basis, PhasePoint { x: m.x0, k: m.k0 }, m.sigma, m.sign, &lf)?;
        let stops: Vec<f64> = (1..=m.steps).map(|j| m.launch + m.elapsed * j as f64 / m.steps as f64).collect();
        let frames = stops
            .iter()
            .map(|&t| local_frame_extrapolated(&red, t, 0.05, 1, &ropts))
            .collect::<Result<Vec<_>>>()?;
        let path = kg_path(&red, m.launch, &stops, &opts)?;
        let rep = propagation_test(&red, &path, &wp, m.sign, &stops, &frames)?;
        let mut w = csv::Writer::from_path(self.out.join("packet.csv")).map_err(csv_err)?;
        w.write_record(["t", "x_center", "k_mean", "leakage"]).map_err(csv_err)?;
        for r in &rep.rows {
            let leak = r.leakage.map(|x| x.to_string()).unwrap_or_default();
            w.write_record([r.t.to_string(), r.x_center.to_string(), r.k_mean.to_string(), leak]).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(rep)
    }

    fn run_microlocal(&mut self) -> Result<Value> {
        let rep = self.wavepacket()?;
        let mut v = to_value(&rep)?;
        v["speed_ok"] = Value::Bool(rep.max_speed <= rep.speed_bound);
        Ok(v)
    }

    /// Assembles report.json from the stage reports of this run or the cache.
    fn run_report(&mut self) -> Result<Value> {
        let mut stages = serde_json::Map::new();
        for st in Stage::ALL {
            if st == Stage::Report {
                continue;
            }
            let v = self.reports.get(st.name()).cloned().or_else(|| self.cached_report(st.name()));
            if let Some(v) = v {
                stages.insert(st.name().to_string(), v);
            }
        }
        let doc = json!({
            "scenario": self.cfg.name,
            "version": VERSION,
            "config_hash": self.cfg.hash(),
            "seed": self.cfg.seed,
            "tolerances": to_value(&self.cfg.tolerances)?,
            "stages": stages,
        });
        let text = serde_json::to_string_pretty(&doc).map_err(|e| Error::InvalidData(e.to_string()))?;
        fs::write(self.out.join("report.json"), text + "\n")?;
        Ok(doc)
    }
}

fn tag_name(t: StateTag) -> String {
    match t {
        StateTag::Vac => "vac",
        StateTag::Ref => "ref",
        StateTag::In => "in",
        StateTag::Out => "out",
    }
    .to_string()
}

/// Applies the command-line overrides to a configuration.
pub fn with_overrides(mut cfg: Config, seed: Option<u64>, k: Option<usize>, tol_scale: Option<f64>) -> Result<Config> {
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(k) = k {
        cfg.basis.k = k;
    }
    if let Some(s) = tol_scale {
        if !(s > 0.0) {
            return Err(Error::InvalidConfig(format!("tolerance scale {s} must be positive")));
        }
        cfg.tolerances = cfg.tolerances.scaled(s);
    }
    cfg.validate()?;
    Ok(cfg)
}
