//! Catalog of 3D chaotic systems, a fixed-step RK4 integrator, and
//! ground-truth coefficients in shifted reference frames.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly::{CandidateLibrary, CoefficientMatrix};

/// Systems with a closed-form right-hand side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SystemKind {
    Lorenz,
    SprottE,
    RayleighBenard,
    SprottF,
    NoseHoover,
    Tsucs2,
    WangSun,
    /// Polynomial field defined entirely by its coefficients.
    Custom,
}

impl SystemKind {
    pub const CATALOG: [SystemKind; 7] = [
        SystemKind::Lorenz,
        SystemKind::SprottE,
        SystemKind::RayleighBenard,
        SystemKind::SprottF,
        SystemKind::NoseHoover,
        SystemKind::Tsucs2,
        SystemKind::WangSun,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SystemKind::Lorenz => "Lorenz",
            SystemKind::SprottE => "SprottE",
            SystemKind::RayleighBenard => "RayleighBenard",
            SystemKind::SprottF => "SprottF",
            SystemKind::NoseHoover => "NoseHoover",
            SystemKind::Tsucs2 => "Tsucs2",
            SystemKind::WangSun => "WangSun",
            SystemKind::Custom => "Custom",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::CATALOG
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Catalog(name.to_string()))
    }

    fn default_params(self) -> &'static [(&'static str, f64)] {
        match self {
            SystemKind::Lorenz => &[("sigma", 10.0), ("rho", 28.0), ("beta", 8.0 / 3.0)],
            SystemKind::SprottE | SystemKind::Custom => &[],
            SystemKind::RayleighBenard => &[("a", 30.0), ("b", 5.0), ("r", 18.0)],
            SystemKind::SprottF => &[("a", 0.5)],
            SystemKind::NoseHoover => &[("a", 1.5)],
            SystemKind::Tsucs2 => &[
                ("a", 40.0),
                ("c", 0.8),
                ("d", 0.5),
                ("eps", 0.65),
                ("f", 20.0),
                ("k", 1.0),
            ],
            SystemKind::WangSun => &[
                ("a", 0.5),
                ("b", -1.0),
                ("d", -0.5),
                ("e", -1.0),
                ("f", -1.0),
                ("q", 1.0),
            ],
        }
    }

    fn default_x0(self) -> [f64; 3] {
        match self {
            SystemKind::Lorenz => [-8.0, 7.0, 27.0],
            SystemKind::SprottE => [-1.0, 1.0, 1.0],
            SystemKind::RayleighBenard => [-16.0, -13.0, 27.0],
            SystemKind::SprottF => [-1.0, -1.4, 1.0],
            SystemKind::NoseHoover => [-2.0, 0.5, 1.0],
            SystemKind::Tsucs2 => [1.0, 1.0, 5.0],
            SystemKind::WangSun => [1.0, 1.0, 0.0],
            SystemKind::Custom => [0.0; 3],
        }
    }
}

/// A named 3D polynomial ODE with parameters and an initial condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub name: String,
    pub kind: SystemKind,
    pub params: BTreeMap<String, f64>,
    pub x0: [f64; 3],
    /// Ground truth over the cubic library; columns are (dx, dy, dz).
    pub coeffs: CoefficientMatrix,
}

/// Terms of one equation as `(label, coefficient)` pairs.
type Terms = Vec<(&'static str, f64)>;

impl SystemSpec {
    /// Catalog system with its published parameters and initial condition.
    pub fn catalog(name: &str) -> Result<Self> {
        Self::catalog_with(name, &BTreeMap::new(), None)
    }

    /// Catalog system with parameter and/or initial-condition overrides.
    pub fn catalog_with(
        name: &str,
        overrides: &BTreeMap<String, f64>,
        x0: Option<[f64; 3]>,
    ) -> Result<Self> {
        let kind = SystemKind::from_name(name)?;
        let mut params: BTreeMap<String, f64> = kind
            .default_params()
            .iter()
            .map(|(k, v)| (k.to_string(), *v))
            .collect();
        for (k, v) in overrides {
            if !params.contains_key(k) {
                return Err(Error::Validation(format!(
                    "system {} has no parameter `{k}`",
                    kind.name()
                )));
            }
            params.insert(k.clone(), *v);
        }
        let coeffs = catalog_coeffs(kind, &params);
        Ok(Self {
            name: kind.name().to_string(),
            kind,
            params,
            x0: x0.unwrap_or_else(|| kind.default_x0()),
            coeffs,
        })
    }

    /// Polynomial system from explicit equations (term label -> coefficient).
    pub fn custom(name: &str, equations: &[BTreeMap<String, f64>; 3], x0: [f64; 3]) -> Result<Self> {
        let lib = CandidateLibrary::cubic();
        let mut coeffs = CoefficientMatrix::zeros(lib.len());
        for (d, eq) in equations.iter().enumerate() {
            for (label, &c) in eq {
                let idx = lib
                    .index_of_label(label)
                    .ok_or_else(|| Error::Validation(format!("unknown library term `{label}`")))?;
                coeffs.set(idx, d, c);
            }
        }
        Ok(Self {
            name: name.to_string(),
            kind: SystemKind::Custom,
            params: BTreeMap::new(),
            x0,
            coeffs,
        })
    }

    pub fn all_catalog() -> Vec<Self> {
        SystemKind::CATALOG
            .iter()
            .map(|k| Self::catalog(k.name()).expect("catalog entry"))
            .collect()
    }

    fn p(&self, key: &str) -> f64 {
        self.params[key]
    }
}

fn catalog_coeffs(kind: SystemKind, p: &BTreeMap<String, f64>) -> CoefficientMatrix {
    let g = |k: &str| p[k];
    let eqs: [Terms; 3] = match kind {
        SystemKind::Lorenz => [
            vec![("x", -g("sigma")), ("y", g("sigma"))],
            vec![("x", g("rho")), ("xz", -1.0), ("y", -1.0)],
            vec![("xy", 1.0), ("z", -g("beta"))],
        ],
        SystemKind::SprottE => [
            vec![("yz", 1.0)],
            vec![("x^2", 1.0), ("y", -1.0)],
            vec![("1", 1.0), ("x", -4.0)],
        ],
        SystemKind::RayleighBenard => [
            vec![("x", -g("a")), ("y", g("a"))],
            vec![("y", g("r")), ("xz", -1.0)],
            vec![("xy", 1.0), ("z", -g("b"))],
        ],
        SystemKind::SprottF => [
            vec![("y", 1.0), ("z", 1.0)],
            vec![("x", -1.0), ("y", g("a"))],
            vec![("x^2", 1.0), ("z", -1.0)],
        ],
        SystemKind::NoseHoover => [
            vec![("y", 1.0)],
            vec![("x", -1.0), ("yz", 1.0)],
            vec![("1", g("a")), ("y^2", -1.0)],
        ],
        SystemKind::Tsucs2 => [
            vec![("x", -g("a")), ("y", g("a")), ("xz", g("d"))],
            vec![("x", g("k")), ("y", g("f")), ("xz", -1.0)],
            vec![("z", g("c")), ("xy", 1.0), ("x^2", -g("eps"))],
        ],
        SystemKind::WangSun => [
            vec![("x", g("a")), ("yz", g("q"))],
            vec![("x", g("b")), ("y", g("d")), ("xz", -1.0)],
            vec![("z", g("e")), ("xy", g("f"))],
        ],
        SystemKind::Custom => [vec![], vec![], vec![]],
    };
    let lib = CandidateLibrary::cubic();
    let mut m = CoefficientMatrix::zeros(lib.len());
    for (d, eq) in eqs.iter().enumerate() {
        for &(label, c) in eq {
            let idx = lib.index_of_label(label).expect("catalog labels are in the library");
            m.values[idx][d] += c;
        }
    }
    m
}

/// Right-hand side `F(state)` of the system.
pub fn eval_rhs(system: &SystemSpec, s: [f64; 3]) -> [f64; 3] {
    let [x, y, z] = s;
    match system.kind {
        SystemKind::Lorenz => {
            let (sigma, rho, beta) = (system.p("sigma"), system.p("rho"), system.p("beta"));
            [sigma * (y - x), x * (rho - z) - y, x * y - beta * z]
        }
        SystemKind::SprottE => [y * z, x * x - y, 1.0 - 4.0 * x],
        SystemKind::RayleighBenard => {
            let (a, b, r) = (system.p("a"), system.p("b"), system.p("r"));
            [a * (y - x), r * y - x * z, x * y - b * z]
        }
        SystemKind::SprottF => [y + z, -x + system.p("a") * y, x * x - z],
        SystemKind::NoseHoover => [y, -x + y * z, system.p("a") - y * y],
        SystemKind::Tsucs2 => {
            let (a, c, d) = (system.p("a"), system.p("c"), system.p("d"));
            let (eps, f, k) = (system.p("eps"), system.p("f"), system.p("k"));
            [
                a * (y - x) + d * x * z,
                k * x + f * y - x * z,
                c * z + x * y - eps * x * x,
            ]
        }
        SystemKind::WangSun => {
            let (a, b, d) = (system.p("a"), system.p("b"), system.p("d"));
            let (e, f, q) = (system.p("e"), system.p("f"), system.p("q"));
            [a * x + q * y * z, b * x + d * y - x * z, e * z + f * x * y]
        }
        SystemKind::Custom => system.coeffs.eval(&CandidateLibrary::cubic(), s),
    }
}

/// Uniformly sampled trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub x: Vec<[f64; 3]>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Copy with every state translated by `delta`.
    pub fn shifted(&self, delta: [f64; 3]) -> Self {
        Self {
            t: self.t.clone(),
            x: self
                .x
                .iter()
                .map(|s| [s[0] + delta[0], s[1] + delta[1], s[2] + delta[2]])
                .collect(),
        }
    }

    /// Per-axis (min, max).
    pub fn bounding_box(&self) -> ([f64; 3], [f64; 3]) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for s in &self.x {
            for d in 0..3 {
                lo[d] = lo[d].min(s[d]);
                hi[d] = hi[d].max(s[d]);
            }
        }
        (lo, hi)
    }

    /// CSV with header `t,x,y,z`, 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,x,y,z")?;
        for (t, s) in self.t.iter().zip(&self.x) {
            writeln!(w, "{},{},{},{}", fmt17(*t), fmt17(s[0]), fmt17(s[1]), fmt17(s[2]))?;
        }
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut t = Vec::new();
        let mut x = Vec::new();
        for (i, line) in BufReader::new(r).lines().enumerate() {
            let line = line?;
            if i == 0 || line.trim().is_empty() {
                continue;
            }
            let v = parse_row(&line, 4)?;
            t.push(v[0]);
            x.push([v[1], v[2], v[3]]);
        }
        Ok(Self { t, x })
    }
}

/// Format with 17 significant digits (round-trips any f64).
pub(crate) fn fmt17(v: f64) -> String {
    let mut s = String::new();
    let _ = write!(s, "{v:.16e}");
    s
}

pub(crate) fn parse_row(line: &str, min_fields: usize) -> Result<Vec<f64>> {
    let vals: Vec<f64> = line
        .split(',')
        .map(|f| f.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Parse {
            path: "<csv>".into(),
            msg: format!("{e} in `{line}`"),
        })?;
    if vals.len() < min_fields {
        return Err(Error::Parse {
            path: "<csv>".into(),
            msg: format!("expected {min_fields} fields in `{line}`"),
        });
    }
    Ok(vals)
}

fn rk4_step<F: Fn([f64; 3]) -> [f64; 3]>(f: &F, s: [f64; 3], dt: f64) -> [f64; 3] {
    let add = |a: [f64; 3], b: [f64; 3], h: f64| [a[0] + h * b[0], a[1] + h * b[1], a[2] + h * b[2]];
    let k1 = f(s);
    let k2 = f(add(s, k1, 0.5 * dt));
    let k3 = f(add(s, k2, 0.5 * dt));
    let k4 = f(add(s, k3, dt));
    [
        s[0] + dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        s[1] + dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        s[2] + dt / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]),
    ]
}

/// Classical RK4 over an arbitrary field. Each output step is split into
/// `substeps` internal steps; `n_steps + 1` samples are returned.
pub fn integrate_field<F: Fn([f64; 3]) -> [f64; 3]>(
    f: F,
    x0: [f64; 3],
    dt: f64,
    n_steps: usize,
    substeps: usize,
) -> Result<Trajectory> {
    if !(dt > 0.0) || n_steps == 0 || substeps == 0 {
        return Err(Error::Validation(format!(
            "integrate needs dt > 0, n_steps >= 1, substeps >= 1 (got {dt}, {n_steps}, {substeps})"
        )));
    }
    let h = dt / substeps as f64;
    let mut t = Vec::with_capacity(n_steps + 1);
    let mut x = Vec::with_capacity(n_steps + 1);
    let mut s = x0;
    t.push(0.0);
    x.push(s);
    for step in 1..=n_steps {
        for _ in 0..substeps {
            s = rk4_step(&f, s, h);
        }
        if !s.iter().all(|v| v.is_finite()) {
            return Err(Error::Divergence { step });
        }
        t.push(step as f64 * dt);
        x.push(s);
    }
    Ok(Trajectory { t, x })
}

/// Fixed-step RK4 of a catalog (or custom) system.
/// Largest internal RK4 step used by [`integrate_rk4`].
pub const MAX_INTERNAL_STEP: f64 = 0.004;

/// Internal RK4 steps per output sample so that each stays below
/// [`MAX_INTERNAL_STEP`].
pub fn auto_substeps(dt: f64) -> usize {
    ((dt / MAX_INTERNAL_STEP) - 1e-9).ceil().max(1.0) as usize
}

/// RK4 sampled every `dt`, internally subdivided by [`auto_substeps`].
pub fn integrate_rk4(system: &SystemSpec, x0: [f64; 3], dt: f64, n_steps: usize) -> Result<Trajectory> {
    integrate_field(|s| eval_rhs(system, s), x0, dt, n_steps, auto_substeps(dt))
}

/// Ground truth expressed in the translated frame `X = x + delta`.
pub fn shift_truth_coefficients(system: &SystemSpec, delta: [f64; 3]) -> CoefficientMatrix {
    system
        .coeffs
        .substitute_shift(&CandidateLibrary::cubic(), delta)
}
