//! Benchmark systems: split-DOF oscillators, a three-part bar, a four-part
//! elastic plate and a two-part scalar wave domain.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use crate::coupling::{CoupledSystem, Force, SignedBooleanMatrix, Subdomain};
use crate::error::{Error, Result};
use crate::fem::{edge_load, restrict, Material, Mesh1D, Mesh2D};
use crate::linalg::{DenseMatrix, DenseVector, SparseMatrix};
use crate::newmark::NewmarkParams;

const AA: NewmarkParams = NewmarkParams::AVERAGE_ACCELERATION;
const CD: NewmarkParams = NewmarkParams::CENTRAL_DIFFERENCE;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Probe {
    pub subdomain: usize,
    pub dof: usize,
    pub label: String,
}

impl Probe {
    pub fn new(subdomain: usize, dof: usize, label: impl Into<String>) -> Self {
        Self {
            subdomain,
            dof,
            label: label.into(),
        }
    }
}

/// Closed-form displacement history of one probe.
#[derive(Clone)]
pub struct Oracle {
    pub probe: usize,
    pub displacement: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl fmt::Debug for Oracle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Oracle {{ probe: {} }}", self.probe)
    }
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: String,
    pub system: CoupledSystem,
    pub duration: f64,
    pub oracle: Option<Oracle>,
    pub probes: Vec<Probe>,
}

/// Per-subdomain overrides applied on top of a scenario's defaults.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub dt_system: Option<f64>,
    pub eta: Vec<Option<usize>>,
    pub params: Vec<Option<NewmarkParams>>,
}

impl Scenario {
    fn new(name: &str, system: CoupledSystem, duration: f64, probes: Vec<Probe>, oracle: Option<Oracle>) -> Result<Self> {
        if !(duration > 0.0) {
            return Err(Error::InvalidSystem("duration must be positive".into()));
        }
        Ok(Self {
            name: name.into(),
            system,
            duration,
            oracle,
            probes,
        })
    }

    /// Number of system steps covering the duration.
    pub fn num_steps(&self) -> usize {
        steps_for(self.duration, self.system.dt())
    }

    /// Rebuilds the system with a different system time-step, `eta` values or
    /// Newmark parameters. Unspecified `eta` values are kept, so changing
    /// only `dt_system` scales every subdomain time-step with it.
    pub fn with_overrides(&self, o: &Overrides) -> Result<Self> {
        let sys = &self.system;
        let s = sys.num_subdomains();
        for (what, len) in [("eta", o.eta.len()), ("newmark", o.params.len())] {
            if len > s {
                return Err(Error::InvalidSystem(format!(
                    "{what} override for subdomain {len} but the scenario has {s}"
                )));
            }
        }
        let dt = o.dt_system.unwrap_or(sys.dt());
        let subs = sys
            .subdomains()
            .iter()
            .enumerate()
            .map(|(i, sub)| {
                let eta = o.eta.get(i).copied().flatten().unwrap_or(sys.eta()[i]);
                if eta == 0 {
                    return Err(Error::InvalidSystem(format!("eta of subdomain {} must be positive", i + 1)));
                }
                let p = o.params.get(i).copied().flatten().unwrap_or(sub.params());
                Ok(sub.clone().with_params(p).with_dt_sub(dt / eta as f64))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut out = self.clone();
        out.system = sys.rebuild(subs, dt)?;
        Ok(out)
    }

    /// Same scenario with the time-step of subdomain `i` set to the system
    /// time-step for every `i`.
    pub fn without_subcycling(&self) -> Result<Self> {
        self.with_overrides(&Overrides {
            eta: vec![Some(1); self.system.num_subdomains()],
            ..Overrides::default()
        })
    }
}

/// `ceil(duration / dt)` with a tolerance for round-off in the ratio.
pub fn steps_for(duration: f64, dt: f64) -> usize {
    let r = duration / dt;
    let n = r.round();
    if (r - n).abs() <= 1e-9 * n.max(1.0) {
        n as usize
    } else {
        r.ceil() as usize
    }
}

/// The current system with all external forces removed; `a` and `lam` are
/// recomputed for the current `(d, v)` and the clock restarts at zero.
pub fn release_forces(sys: &CoupledSystem) -> Result<CoupledSystem> {
    let subs = sys
        .subdomains()
        .iter()
        .map(|s| s.clone().with_force(Force::zero()))
        .collect();
    let mut out = sys.rebuild(subs, sys.dt())?;
    out.set_solver(sys.solver());
    Ok(out)
}

pub const SCENARIO_NAMES: [&str; 5] = ["sdof2", "sdof3", "bar1d", "plate2d", "wave2d"];

/// Builds a scenario by name with its default parameters.
pub fn build_scenario(name: &str) -> Result<Scenario> {
    match name {
        "sdof2" => build_sdof2(),
        "sdof3" => build_sdof3(),
        "bar1d" => build_bar_1d((5, 5, 5)),
        "plate2d" => build_plate_2d(),
        "wave2d" => build_wave_2d(),
        other => Err(Error::InvalidSystem(format!(
            "unknown scenario '{other}' (expected one of {})",
            SCENARIO_NAMES.join(", ")
        ))),
    }
}

fn scalar(x: f64) -> SparseMatrix {
    SparseMatrix::from_dense(&DenseMatrix::from_diag(&[x]))
}

fn single(m: f64, k: f64, p: NewmarkParams, dt: f64, f: Force, c: &[(usize, usize, i8)], nc: usize) -> Result<Subdomain> {
    Subdomain::new(scalar(m), scalar(k), p, dt, f, SignedBooleanMatrix::new(nc, 1, c)?)
}

pub const SDOF2_MASS: (f64, f64) = (0.1, 0.005);
pub const SDOF2_STIFFNESS: (f64, f64) = (2.5, 50.0);

/// Displacement of the merged oscillator `m = 0.105`, `k = 52.5`, `d0 = 0.1`, `v0 = 1`.
pub fn sdof2_displacement(t: f64) -> f64 {
    let w = sdof2_omega();
    0.1 * (w * t).cos() + (w * t).sin() / w
}

pub fn sdof2_omega() -> f64 {
    ((SDOF2_STIFFNESS.0 + SDOF2_STIFFNESS.1) / (SDOF2_MASS.0 + SDOF2_MASS.1)).sqrt()
}

/// Interface force of the merged motion, `m_A u'' + k_A u`.
pub fn sdof2_lambda(t: f64) -> f64 {
    let w = sdof2_omega();
    (SDOF2_STIFFNESS.0 - SDOF2_MASS.0 * w * w) * sdof2_displacement(t)
}

pub fn build_sdof2() -> Result<Scenario> {
    let a = single(SDOF2_MASS.0, SDOF2_STIFFNESS.0, AA, 0.02, Force::zero(), &[(0, 0, 1)], 1)?;
    let b = single(SDOF2_MASS.1, SDOF2_STIFFNESS.1, AA, 0.005, Force::zero(), &[(0, 0, -1)], 1)?;
    let sys = CoupledSystem::new(vec![a, b], 0.02, vec![(vec![0.1], vec![1.0]); 2])?;
    Scenario::new(
        "sdof2",
        sys,
        0.5,
        vec![Probe::new(0, 0, "d_A"), Probe::new(1, 0, "d_B")],
        Some(Oracle {
            probe: 0,
            displacement: Arc::new(sdof2_displacement),
        }),
    )
}

pub fn sdof3_displacement(t: f64) -> f64 {
    let (m, k, f, d0): (f64, f64, f64, f64) = (5.11, 11.5, 1.0, 1.0);
    let w = (k / m).sqrt();
    f / k + (d0 - f / k) * (w * t).cos()
}

pub fn build_sdof3() -> Result<Scenario> {
    let a = single(5.0, 5.0, AA, 0.01, Force::zero(), &[(0, 0, 1)], 2)?;
    let b = single(0.1, 2.5, AA, 0.005, Force::constant(vec![1.0]), &[(0, 0, -1), (1, 0, 1)], 2)?;
    let c = single(0.01, 4.0, AA, 0.0025, Force::zero(), &[(1, 0, -1)], 2)?;
    let sys = CoupledSystem::new(vec![a, b, c], 0.01, vec![(vec![1.0], vec![0.0]); 3])?;
    Scenario::new(
        "sdof3",
        sys,
        10.0,
        vec![Probe::new(0, 0, "d_A"), Probe::new(1, 0, "d_B"), Probe::new(2, 0, "d_C")],
        Some(Oracle {
            probe: 0,
            displacement: Arc::new(sdof3_displacement),
        }),
    )
}

pub const BAR_E: f64 = 1e4;
pub const BAR_RHO: f64 = 0.1;
pub const BAR_AREA: f64 = 1.0;
pub const BAR_LENGTH: f64 = 1.0;
pub const BAR_LOAD: f64 = 10.0;

/// Series solution of the fixed-free bar under a suddenly applied tip load,
/// summed over the first `terms` odd modes.
pub fn series_bar_solution(x: f64, t: f64, terms: usize) -> f64 {
    let (e, rho, a, l, p) = (BAR_E, BAR_RHO, BAR_AREA, BAR_LENGTH, BAR_LOAD);
    let c = (e / rho).sqrt();
    let mut s = 0.0;
    for m in 0..terms {
        let n = (2 * m + 1) as f64;
        let sign = if m % 2 == 0 { -1.0 } else { 1.0 };
        let beta = n * PI / (2.0 * l);
        s += sign / (n * n) * (beta * x).sin() * (beta * c * t).cos();
    }
    p * x / (e * a) + 8.0 * p * l / (PI * PI * e * a) * s
}

/// Tip displacement by d'Alembert reflection: a piecewise-linear sawtooth
/// between `0` and `2 P L / (E A)` with period `4 L / c`.
pub fn bar_tip_displacement(t: f64) -> f64 {
    let c = (BAR_E / BAR_RHO).sqrt();
    let period = 4.0 * BAR_LENGTH / c;
    let tau = t.rem_euclid(period) / period;
    let peak = 2.0 * BAR_LOAD * BAR_LENGTH / (BAR_E * BAR_AREA);
    if tau <= 0.5 {
        peak * 2.0 * tau
    } else {
        peak * 2.0 * (1.0 - tau)
    }
}

/// Three equal bars A | B | C, fixed at the left end of A, loaded at the
/// right end of C. A and C use average acceleration, B central difference.
pub fn build_bar_1d(elements: (usize, usize, usize)) -> Result<Scenario> {
    let (na, nb, nc) = elements;
    let third = BAR_LENGTH / 3.0;
    let parts = [(0.0, third, na), (third, 2.0 * third, nb), (2.0 * third, BAR_LENGTH, nc)];
    let mut subs = Vec::with_capacity(3);
    let mut sizes = Vec::with_capacity(3);
    for (p, &(x0, x1, n)) in parts.iter().enumerate() {
        let mesh = Mesh1D::uniform(x0, x1, n, BAR_E, BAR_RHO, BAR_AREA)?;
        let (k, m) = mesh.assemble();
        let free: Vec<usize> = if p == 0 { (1..=n).collect() } else { (0..=n).collect() };
        sizes.push(free.len());
        subs.push((restrict(&k, &free), restrict(&m, &free)));
    }
    let c_a = SignedBooleanMatrix::new(2, sizes[0], &[(0, sizes[0] - 1, 1)])?;
    let c_b = SignedBooleanMatrix::new(2, sizes[1], &[(0, 0, -1), (1, sizes[1] - 1, 1)])?;
    let c_c = SignedBooleanMatrix::new(2, sizes[2], &[(1, 0, -1)])?;
    let tip = sizes[2] - 1;
    let mut load = vec![0.0; sizes[2]];
    load[tip] = BAR_LOAD;
    let dt = 1e-3;
    let params = [AA, CD, AA];
    // smallest power of ten that keeps B below its critical step
    let crit_b = crate::newmark::critical_time_step(&subs[1].1, &subs[1].0, CD)?;
    let mut eta_b = 10.0;
    while !crit_b.admits(dt / eta_b) {
        eta_b *= 10.0;
    }
    let etas = [1.0, eta_b, 1.0];
    let forces = [Force::zero(), Force::zero(), Force::constant(load)];
    let cs = [c_a, c_b, c_c];
    let built = subs
        .into_iter()
        .zip(params)
        .zip(etas)
        .zip(forces)
        .zip(cs)
        .map(|((((km, p), eta), f), c)| Subdomain::new(km.1, km.0, p, dt / eta, f, c))
        .collect::<Result<Vec<_>>>()?;
    let init = sizes.iter().map(|&n| (vec![0.0; n], vec![0.0; n])).collect();
    let sys = CoupledSystem::new(built, dt, init)?;
    Scenario::new(
        "bar1d",
        sys,
        0.05,
        vec![Probe::new(2, tip, "d_tip")],
        Some(Oracle {
            probe: 0,
            displacement: Arc::new(bar_tip_displacement),
        }),
    )
}

/// One finite element partition before gluing: full matrices, the key of
/// every node on the global grid, and which node DOFs are kept.
struct Part {
    k: SparseMatrix,
    m: SparseMatrix,
    keys: Vec<(i64, i64)>,
    dpn: usize,
    fixed: Vec<bool>,
}

impl Part {
    fn from_mesh(mesh: &Mesh2D, key: impl Fn([f64; 2]) -> (i64, i64), fixed: impl Fn((i64, i64)) -> bool) -> Self {
        let (k, m) = mesh.assemble();
        let keys: Vec<(i64, i64)> = mesh.nodes().iter().map(|&p| key(p)).collect();
        let fixed = keys.iter().map(|&k| fixed(k)).collect();
        Part {
            k,
            m,
            keys,
            dpn: mesh.dofs_per_node(),
            fixed,
        }
    }

    /// Kept DOFs in original numbering, and original node to reduced DOF base.
    fn free_dofs(&self) -> (Vec<usize>, Vec<Option<usize>>) {
        let mut free = Vec::new();
        let mut base = Vec::with_capacity(self.keys.len());
        for (n, &f) in self.fixed.iter().enumerate() {
            if f {
                base.push(None);
            } else {
                base.push(Some(free.len()));
                free.extend((0..self.dpn).map(|c| n * self.dpn + c));
            }
        }
        (free, base)
    }
}

/// Reduced matrices plus chained constraints between every group of
/// coincident free nodes (`k` partitions sharing a node give `k - 1` rows per
/// component).
fn glue(parts: &[Part]) -> Result<(Vec<(SparseMatrix, SparseMatrix)>, Vec<SignedBooleanMatrix>, Vec<Vec<Option<usize>>>)> {
    let mut reduced = Vec::with_capacity(parts.len());
    let mut bases = Vec::with_capacity(parts.len());
    let mut owners: BTreeMap<(i64, i64), Vec<(usize, usize)>> = BTreeMap::new();
    for (p, part) in parts.iter().enumerate() {
        let (free, base) = part.free_dofs();
        reduced.push((restrict(&part.k, &free), restrict(&part.m, &free)));
        for (n, b) in base.iter().enumerate() {
            if b.is_some() {
                owners.entry(part.keys[n]).or_default().push((p, n));
            }
        }
        bases.push(base);
    }
    let mut rows: Vec<Vec<(usize, usize, i8)>> = vec![Vec::new(); parts.len()];
    let mut nc = 0;
    for group in owners.values().filter(|g| g.len() > 1) {
        for w in group.windows(2) {
            let (p0, n0) = w[0];
            let (p1, n1) = w[1];
            let dpn = parts[p0].dpn;
            for c in 0..dpn {
                rows[p0].push((nc, bases[p0][n0].expect("free node") + c, 1));
                rows[p1].push((nc, bases[p1][n1].expect("free node") + c, -1));
                nc += 1;
            }
        }
    }
    let cs = rows
        .iter()
        .zip(&reduced)
        .map(|(r, (k, _))| SignedBooleanMatrix::new(nc, k.rows(), r))
        .collect::<Result<Vec<_>>>()?;
    Ok((reduced, cs, bases))
}

pub const PLATE_LAME: (f64, f64) = (100.0, 100.0);
pub const PLATE_RHO: f64 = 100.0;

pub const PLATE_SIDE: f64 = 1.0;

/// Square `[0, PLATE_SIDE]^2` in four quadrants numbered bottom-left,
/// bottom-right, top-left, top-right, each meshed with 5 x 5 quads. The left
/// edge is fixed and a force `(1, 1)` acts at the bottom-right corner.
pub fn build_plate_2d() -> Result<Scenario> {
    let material = Material::Elastic {
        lame_lambda: PLATE_LAME.0,
        mu: PLATE_LAME.1,
        rho: PLATE_RHO,
    };
    let n = 5;
    let half = PLATE_SIDE / 2.0;
    let quads = [(0.0, half, 0.0, half), (half, PLATE_SIDE, 0.0, half), (0.0, half, half, PLATE_SIDE), (half, PLATE_SIDE, half, PLATE_SIDE)];
    let h = half / n as f64;
    let key = |p: [f64; 2]| ((p[0] / h).round() as i64, (p[1] / h).round() as i64);
    let parts = quads
        .iter()
        .map(|&(x0, x1, y0, y1)| {
            let mesh = Mesh2D::structured(x0, x1, y0, y1, n, n, material)?;
            Ok(Part::from_mesh(&mesh, key, |(i, _)| i == 0))
        })
        .collect::<Result<Vec<_>>>()?;
    let (reduced, cs, bases) = glue(&parts)?;
    let corner = parts[1]
        .keys
        .iter()
        .position(|&k| k == (10, 0))
        .and_then(|node| bases[1][node])
        .ok_or_else(|| Error::InvalidMesh("corner node not found".into()))?;
    let dt = 0.1;
    let params = [CD, CD, CD, AA];
    let etas = [5.0, 5.0, 5.0, 1.0];
    let mut subs = Vec::with_capacity(4);
    let mut init = Vec::with_capacity(4);
    for (p, ((k, m), c)) in reduced.into_iter().zip(cs).enumerate() {
        let nd = k.rows();
        let force = if p == 1 {
            let mut f = vec![0.0; nd];
            f[corner] = 1.0;
            f[corner + 1] = 1.0;
            Force::constant(f)
        } else {
            Force::zero()
        };
        subs.push(Subdomain::new(m, k, params[p], dt / etas[p], force, c)?);
        init.push((vec![0.0; nd], vec![0.0; nd]));
    }
    let sys = CoupledSystem::new(subs, dt, init)?;
    Scenario::new(
        "plate2d",
        sys,
        5.0,
        vec![Probe::new(1, corner, "ux_A"), Probe::new(1, corner + 1, "uy_A")],
        None,
    )
}

pub const WAVE_LOAD_AMPLITUDE: f64 = 5.0;
pub const WAVE_LOAD_DURATION: f64 = 0.1;

/// Time profile of the edge excitation.
pub fn wave_load_profile(t: f64) -> f64 {
    if (0.0..=WAVE_LOAD_DURATION).contains(&t) {
        WAVE_LOAD_AMPLITUDE * (2.0 * PI * t / WAVE_LOAD_DURATION).sin()
    } else {
        0.0
    }
}

pub const WAVE_MESH: (usize, usize) = (105, 54);
pub const WAVE_INTERFACE_X: f64 = 0.4;

/// Scalar wave on `[0, 2] x [0, 1]`, fixed on `y = 0`, `y = 1` and `x = 2`,
/// excited on `x = 0`, `y in [0.4, 0.6]`. Subdomain 1 is `x <= 0.4`
/// (central difference, `dt_1 = 1e-5`), subdomain 2 the rest (average
/// acceleration, `dt_2 = 1e-4`).
pub fn build_wave_2d() -> Result<Scenario> {
    build_wave_2d_with(WAVE_MESH, 1.0)
}

/// As [`build_wave_2d`] on an `nx` by `ny` grid with load scale `scale`
/// (`0` gives the unloaded problem).
pub fn build_wave_2d_with(mesh: (usize, usize), scale: f64) -> Result<Scenario> {
    let (nx, ny) = mesh;
    let (lx, ly) = (2.0, 1.0);
    let hx = lx / nx as f64;
    let ni = (WAVE_INTERFACE_X / hx).round() as usize;
    if ni == 0 || ni >= nx || ((ni as f64) * hx - WAVE_INTERFACE_X).abs() > 1e-9 {
        return Err(Error::InvalidMesh(format!(
            "x = {WAVE_INTERFACE_X} is not a grid line of a {nx}-column mesh"
        )));
    }
    let material = Material::Wave { c0: 1.0 };
    let key = |p: [f64; 2]| ((p[0] / hx).round() as i64, (p[1] * ny as f64 / ly).round() as i64);
    let fixed = |(i, j): (i64, i64)| j == 0 || j == ny as i64 || i == nx as i64;
    let m1 = Mesh2D::structured(0.0, WAVE_INTERFACE_X, 0.0, ly, ni, ny, material)?;
    let m2 = Mesh2D::structured(WAVE_INTERFACE_X, lx, 0.0, ly, nx - ni, ny, material)?;
    let parts = [Part::from_mesh(&m1, key, fixed), Part::from_mesh(&m2, key, fixed)];
    let (reduced, cs, bases) = glue(&parts)?;

    // consistent load on the x = 0 edge of subdomain 1 (nodes (0, j))
    let n1 = reduced[0].0.rows();
    let mut pattern = vec![0.0; n1];
    let hy = ly / ny as f64;
    for j in 0..ny {
        let (s0, s1) = (j as f64 * hy, (j + 1) as f64 * hy);
        let fe = edge_load(s0, s1, 0.4 * ly, 0.6 * ly, 1.0);
        for (node_j, v) in [(j, fe[0]), (j + 1, fe[1])] {
            // column 0 of a column-major structured mesh: node index = j
            if let Some(dof) = bases[0][node_j] {
                pattern[dof] += v;
            }
        }
    }
    let pattern: DenseVector = pattern.into_iter().map(|x| scale * x).collect();
    let force = if scale == 0.0 {
        Force::zero()
    } else {
        Force::from_fn(move |t| {
            let s = wave_load_profile(t);
            pattern.iter().map(|x| s * x).collect()
        })
    };
    let dt = 1e-4;
    let mut it = reduced.into_iter().zip(cs);
    let ((k1, m1), c1) = it.next().expect("two parts");
    let ((k2, m2), c2) = it.next().expect("two parts");
    let (n1, n2) = (k1.rows(), k2.rows());
    let s1 = Subdomain::new(m1, k1, CD, 1e-5, force, c1)?;
    let s2 = Subdomain::new(m2, k2, AA, dt, Force::zero(), c2)?;
    let sys = CoupledSystem::new(
        vec![s1, s2],
        dt,
        vec![(vec![0.0; n1], vec![0.0; n1]), (vec![0.0; n2], vec![0.0; n2])],
    )?;
    let mut probes = Vec::new();
    if ny % 2 == 0 {
        if let Some(d) = bases[0][ny / 2] {
            probes.push(Probe::new(0, d, "u_load_mid"));
        }
    }
    Scenario::new("wave2d", sys, 0.25, probes, None)
}

/// Smallest and largest displacement over all subdomain DOFs.
pub fn displacement_extrema(sys: &CoupledSystem) -> (f64, f64) {
    sys.states()
        .iter()
        .flat_map(|s| s.d.iter().copied())
        .fold((0.0f64, 0.0f64), |(lo, hi), x| (lo.min(x), hi.max(x)))
}
