use std::path::Path;
use std::process::ExitCode;

use anyhow::anyhow;
use qhr::forward::{default_grid, pca_default, ForwardCurve};
use qhr::mc::{simulate as run_paths, InitialState, McConfig};
use qhr::model::{diagnostics as model_diagnostics, Violation};
use qhr::moments::check_stability_sufficient;
use qhr::pricing::{atm_term_structures, price_options, OptionGrid};
use qhr::scalar::{scalar_closed_moments, PearsonIV, ScalarParams};
use qhr::{ModelParams, MomentSystem, Vector};

use crate::output::{emit, file_hash, Cell, Format, Provenance, Table};
use crate::{Failure, McArgs, OutputArgs};

type Res<T> = Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(anyhow!(msg.into()))
}

struct Loaded {
    params: ModelParams,
    label: String,
    hash: String,
}

fn load(path: &Path) -> Res<Loaded> {
    let params = qhr::io::load_model(path)?;
    let hash = file_hash(path).map_err(Failure::Usage)?;
    let label = params.label.clone().unwrap_or_else(|| "model".into());
    Ok(Loaded { params, label, hash })
}

fn slug(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect()
}

/// `a,b,c` or `start:stop:n` (n equally spaced points, ends included).
pub fn parse_grid(text: &str) -> Res<Vec<f64>> {
    let text = text.trim();
    if text.is_empty() {
        return Err(usage("empty grid"));
    }
    let num = |s: &str| -> Res<f64> {
        s.trim()
            .parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .ok_or_else(|| usage(format!("bad number {s:?} in grid {text:?}")))
    };
    if text.contains(':') {
        let parts: Vec<&str> = text.split(':').collect();
        let [a, b, n] = parts.as_slice() else {
            return Err(usage(format!("range grid must be start:stop:n, got {text:?}")));
        };
        let (a, b) = (num(a)?, num(b)?);
        let n: usize = n
            .trim()
            .parse()
            .map_err(|_| usage(format!("bad point count in {text:?}")))?;
        return match n {
            0 => Err(usage("empty grid")),
            1 => Ok(vec![a]),
            _ => Ok((0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()),
        };
    }
    text.split(',').map(num).collect()
}

fn parse_y0(text: Option<&str>, p: usize) -> Res<Vector> {
    let Some(text) = text else {
        return Ok(Vector::zeros(p));
    };
    let v = parse_grid(text)?;
    if v.len() != p {
        return Err(usage(format!("y0 has {} entries, model has p = {p}", v.len())));
    }
    Ok(Vector::from_vec(v))
}

fn fmt_vec(v: &Vector, decimals: usize) -> String {
    let items: Vec<String> = v
        .iter()
        .map(|x| {
            let s = format!("{x:.decimals$}");
            // No "-0.00" for values that round to zero.
            if s.trim_start_matches('-').chars().all(|c| c == '0' || c == '.') {
                s.trim_start_matches('-').to_owned()
            } else {
                s
            }
        })
        .collect();
    items.join(";")
}

fn mc_config(mc: &McArgs, horizon: f64, init: InitialState) -> McConfig {
    McConfig::new(mc.paths, horizon, init)
        .with_seed(mc.seed)
        .with_steps_per_year(mc.steps_per_year)
        .with_antithetic(!mc.no_antithetic)
}

fn provenance(command: &str, models: &[&Loaded], seed: Option<u64>) -> Provenance {
    Provenance {
        command: command.into(),
        models: models.iter().map(|m| (m.label.clone(), m.hash.clone())).collect(),
        seed,
    }
}

fn finish(tables: &[Table], prov: &Provenance, output: &OutputArgs, default: Format) -> Res<()> {
    emit(tables, prov, output.format.unwrap_or(default), output.out.as_deref()).map_err(Failure::Usage)
}

fn stationary_system(params: &ModelParams) -> Res<MomentSystem> {
    params.ensure_valid()?;
    let sys = MomentSystem::build(params)?;
    sys.stationary_summary()?;
    Ok(sys)
}

pub fn validate(path: &Path, output: &OutputArgs) -> Res<ExitCode> {
    let m = load(path)?;
    let p = &m.params;
    let mut t = Table::new(format!("validate_{}", slug(&m.label)), &[("clause", 0), ("status", 0), ("detail", 0)]);
    let pass = |ok: bool| Cell::from(if ok { "PASS" } else { "FAIL" });

    let violations = p.validate();
    let has = |f: &dyn Fn(&Violation) -> bool| violations.iter().find(|v| f(v));
    let clauses: [(&str, &dyn Fn(&Violation) -> bool); 5] = [
        ("dimensions and finiteness", &|v| matches!(v, Violation::Dimension(_) | Violation::NonFinite)),
        ("alpha > 0", &|v| matches!(v, Violation::AlphaNotPositive(_))),
        ("Gamma symmetric", &|v| matches!(v, Violation::GammaNotSymmetric)),
        ("Lambda spectrum real and positive", &|v| matches!(v, Violation::LambdaNotRealPositive { .. })),
        ("[alpha beta'; beta Gamma] psd", &|v| matches!(v, Violation::BorderedNotPsd { .. })),
    ];
    for (name, f) in clauses {
        match has(f) {
            Some(v) => t.push(vec![name.into(), pass(false), v.to_string().into()]),
            None => t.push(vec![name.into(), pass(true), Cell::Empty]),
        }
    }
    let admissible = violations.is_empty();
    let mut stationary = false;
    if admissible {
        let sys = MomentSystem::build(p)?;
        let spectra = sys.stability()?;
        let eig_ok = spectra.stable();
        let mu = spectra.mu;
        t.push(vec![
            "eigenvalue test: Re spec(A_kk) > 0, k = 1..4".into(),
            pass(eig_ok),
            format!("mu1 = {:.4}, mu2 = {:.4}, mu3 = {:.4}, mu4 = {:.4}", mu[0], mu[1], mu[2], mu[3]).into(),
        ]);
        let kappa = sys.kappa()?;
        t.push(vec!["kappa < 1".into(), pass(kappa < 1.0), format!("kappa = {kappa:.4}").into()]);
        let suff = check_stability_sufficient(p)?;
        t.push(vec![
            "sufficient: Gamma >= 0 and kappa~ < 2/3".into(),
            pass(suff.passes),
            format!(
                "kappa~ = {:.4}, Gamma {}",
                suff.kappa_tilde,
                if suff.gamma_nonneg { ">= 0" } else { "has negative entries" }
            )
            .into(),
        ]);
        stationary = eig_ok && kappa < 1.0;
    } else {
        t.push(vec!["stationarity".into(), "SKIP".into(), "model not admissible".into()]);
    }
    let ok = admissible && stationary;
    t.push(vec!["overall".into(), pass(ok), Cell::Empty]);
    finish(&[t], &provenance("validate", &[&m], None), output, Format::Table)?;
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

pub fn diagnostics(paths: &[std::path::PathBuf], eigen: bool, output: &OutputArgs) -> Res<ExitCode> {
    let models = paths.iter().map(|p| load(p)).collect::<Res<Vec<_>>>()?;
    let mut t = Table::new(
        "diagnostics",
        &[
            ("model", 0),
            ("p", 0),
            ("mu2", 2),
            ("mu3", 2),
            ("mu4", 2),
            ("kappa", 2),
            ("kappa_tilde", 2),
            ("y_min", 0),
            ("sigma_min_pct", 2),
            ("sigma_inf_pct", 2),
            ("kurt_inf", 2),
            ("status", 0),
        ],
    );
    let mut eig = Table::new("eigenvalues_a22", &[("model", 0), ("index", 0), ("re", 2), ("im", 2)]);
    let mut all_ok = true;
    for m in &models {
        let p = m.params.dim();
        match model_diagnostics(&m.params) {
            Ok(d) => {
                let y_min = if matches!(output.format, Some(Format::Table) | None) {
                    fmt_vec(&d.y_min, if p == 1 { 2 } else { 4 })
                } else {
                    let items: Vec<String> = d.y_min.iter().map(|x| format!("{x:?}")).collect();
                    items.join(";")
                };
                t.push(vec![
                    m.label.as_str().into(),
                    p.to_string().into(),
                    d.mu2.into(),
                    d.mu3.into(),
                    d.mu4.into(),
                    d.kappa.into(),
                    d.kappa_tilde.into(),
                    y_min.into(),
                    (100.0 * d.sigma_min).into(),
                    (100.0 * d.sigma_infty).into(),
                    d.kurt_infty.into(),
                    "ok".into(),
                ]);
            }
            Err(e) => {
                all_ok = false;
                let mut row = vec![Cell::from(m.label.as_str()), p.to_string().into()];
                row.extend((0..9).map(|_| Cell::Empty));
                row.push(e.to_string().into());
                t.push(row);
            }
        }
        if eigen {
            if let Ok(spectra) = MomentSystem::build(&m.params).and_then(|s| s.stability()) {
                for (i, z) in spectra.eigenvalues[1].iter().enumerate() {
                    eig.push(vec![m.label.as_str().into(), (i + 1).to_string().into(), z.re.into(), z.im.into()]);
                }
            }
        }
    }
    let refs: Vec<&Loaded> = models.iter().collect();
    let mut tables = vec![t];
    if eigen {
        tables.push(eig);
    }
    finish(&tables, &provenance("diagnostics", &refs, None), output, Format::Table)?;
    Ok(if all_ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

pub fn curves(path: &Path, y0s: &[String], grid: Option<&str>, output: &OutputArgs) -> Res<ExitCode> {
    let m = load(path)?;
    let p = m.params.dim();
    let grid = grid.map(parse_grid).transpose()?.unwrap_or_else(default_grid);
    let starts: Vec<Vector> = if y0s.is_empty() {
        vec![Vector::zeros(p)]
    } else {
        y0s.iter().map(|s| parse_y0(Some(s), p)).collect::<Res<_>>()?
    };
    if grid.iter().any(|&s| s < 0.0) {
        return Err(usage("horizons must be non-negative"));
    }
    let sys = stationary_system(&m.params)?;
    let curve = ForwardCurve::new(&sys)?;
    let names: Vec<String> = starts
        .iter()
        .map(|y| format!("vol(y0={})", fmt_vec(y, 4)))
        .collect();
    let mut cols: Vec<(&str, usize)> = vec![("s", 4)];
    cols.extend(names.iter().map(|n| (n.as_str(), 6)));
    cols.extend([("vol_env_v0", 6), ("vol_env_min", 6)]);
    let mut t = Table::new(format!("curves_{}", slug(&m.label)), &cols);
    for &s in &grid {
        let mut row = vec![Cell::Num(s)];
        for y in &starts {
            row.push(curve.variance_at(y, s)?.max(0.0).sqrt().into());
        }
        match curve.envelope(s) {
            Ok(env) => {
                row.push(env.v0.max(0.0).sqrt().into());
                row.push(env.v_min.max(0.0).sqrt().into());
            }
            // Unbounded or non-convex slices have no finite minimum.
            Err(qhr::Error::UnboundedSlice { .. } | qhr::Error::NonConvexSlice { .. }) => {
                let v0 = curve.sigma2_infty() - sys.psi(s)?.dot(&sys.eta_infty());
                row.push(v0.max(0.0).sqrt().into());
                row.push(Cell::Empty);
            }
            Err(e) => return Err(e.into()),
        }
        t.push(row);
    }
    finish(&[t], &provenance("curves", &[&m], None), output, Format::Csv)?;
    Ok(ExitCode::SUCCESS)
}

pub fn pca(path: &Path, grid: Option<&str>, output: &OutputArgs) -> Res<ExitCode> {
    let m = load(path)?;
    let grid = grid.map(parse_grid).transpose()?.unwrap_or_else(default_grid);
    let sys = stationary_system(&m.params)?;
    let dec = pca_default(&sys)?;
    let names: Vec<String> = (1..=dec.rank).map(|i| format!("pc{i}")).collect();
    let mut cols: Vec<(&str, usize)> = vec![("t", 4)];
    cols.extend(names.iter().map(|n| (n.as_str(), 6)));
    let mut curves = Table::new(format!("pca_{}_curves", slug(&m.label)), &cols);
    for &s in &grid {
        let u = dec.factor_curves(s)?;
        let mut row = vec![Cell::Num(s)];
        row.extend((0..dec.rank).map(|i| Cell::Num(u[i] * dec.eigenvalues[i].max(0.0).sqrt())));
        curves.push(row);
    }
    let total: f64 = dec.eigenvalues.iter().map(|d| d.max(0.0)).sum();
    let mut eig = Table::new(
        format!("pca_{}_eigenvalues", slug(&m.label)),
        &[("component", 0), ("variance", 10), ("fraction", 6)],
    );
    for (i, d) in dec.eigenvalues.iter().enumerate() {
        let frac = if total > 0.0 { d.max(0.0) / total } else { 0.0 };
        eig.push(vec![(i + 1).to_string().into(), (*d).into(), frac.into()]);
    }
    finish(&[curves, eig], &provenance("pca", &[&m], None), output, Format::Csv)?;
    Ok(ExitCode::SUCCESS)
}

pub fn density(path: &Path, grid: Option<&str>, output: &OutputArgs) -> Res<ExitCode> {
    let m = load(path)?;
    m.params.ensure_valid()?;
    let sp = ScalarParams::from_model(&m.params)?;
    let law = PearsonIV::new(sp)?;
    let grid = match grid {
        Some(g) => parse_grid(g)?,
        None => {
            let sd = match scalar_closed_moments(&sp) {
                Ok((q, _, _)) => q.sqrt(),
                Err(_) => law.moment(2).sqrt(),
            };
            (0..=240).map(|i| -6.0 * sd + 12.0 * sd * i as f64 / 240.0).collect()
        }
    };
    let student = law.student_t_mapping().is_some();
    let mut cols = vec![("y", 5), ("density", 6), ("cdf", 6)];
    if student {
        cols.push(("student_t", 6));
    }
    let mut t = Table::new(format!("density_{}", slug(&m.label)), &cols);
    for &y in &grid {
        let mut row = vec![Cell::Num(y), law.density(y).into(), law.cdf(y).into()];
        if student {
            row.push(law.student_t_density(y).into());
        }
        t.push(row);
    }
    finish(&[t], &provenance("density", &[&m], None), output, Format::Csv)?;
    Ok(ExitCode::SUCCESS)
}

pub fn smile(
    path: &Path,
    y0: Option<&str>,
    maturities: &str,
    grid: &str,
    normalized: bool,
    mc: &McArgs,
    output: &OutputArgs,
) -> Res<ExitCode> {
    let m = load(path)?;
    m.params.ensure_valid()?;
    let y0 = parse_y0(y0, m.params.dim())?;
    let grid = OptionGrid {
        maturities: parse_grid(maturities)?,
        log_moneyness: parse_grid(grid)?,
        normalized,
    };
    let cfg = mc_config(mc, 0.0, InitialState::Fixed(y0.clone()));
    let surface = price_options(&m.params, &y0, &grid, &cfg)?;
    let mut t = Table::new(
        format!("smile_{}", slug(&m.label)),
        &[
            ("T", 4),
            ("ell", 4),
            ("strike", 4),
            ("call", 6),
            ("call_se", 6),
            ("put", 6),
            ("put_se", 6),
            ("parity_gap", 6),
            ("parity_se", 6),
            ("implied_vol", 4),
        ],
    );
    for n in &surface.nodes {
        t.push(vec![
            n.maturity.into(),
            n.ell.into(),
            n.strike.into(),
            n.call.into(),
            n.call_se.into(),
            n.put.into(),
            n.put_se.into(),
            n.parity_gap.into(),
            n.parity_se.into(),
            n.implied_vol.into(),
        ]);
    }
    finish(&[t], &provenance("smile", &[&m], Some(mc.seed)), output, Format::Csv)?;
    Ok(ExitCode::SUCCESS)
}

pub fn atm(
    path: &Path,
    y0s: &[String],
    maturities: &str,
    eps: f64,
    mc: &McArgs,
    output: &OutputArgs,
) -> Res<ExitCode> {
    let m = load(path)?;
    m.params.ensure_valid()?;
    if !(eps > 0.0) {
        return Err(usage("eps must be positive"));
    }
    let p = m.params.dim();
    let starts: Vec<Vector> = if y0s.is_empty() {
        vec![Vector::zeros(p)]
    } else {
        y0s.iter().map(|s| parse_y0(Some(s), p)).collect::<Res<_>>()?
    };
    let grid = OptionGrid {
        maturities: parse_grid(maturities)?,
        log_moneyness: vec![-eps, 0.0, eps],
        normalized: false,
    };
    let mut t = Table::new(
        format!("atm_{}", slug(&m.label)),
        &[("y0", 0), ("T", 4), ("atm_vol", 4), ("atm_skew", 4), ("skew_se", 4)],
    );
    for y0 in &starts {
        let cfg = mc_config(mc, 0.0, InitialState::Fixed(y0.clone()));
        let surface = price_options(&m.params, y0, &grid, &cfg)?;
        for pt in atm_term_structures(&surface, eps)? {
            t.push(vec![
                fmt_vec(y0, 4).into(),
                pt.maturity.into(),
                pt.atm_vol.into(),
                pt.atm_skew.into(),
                pt.skew_se.into(),
            ]);
        }
    }
    finish(&[t], &provenance("atm", &[&m], Some(mc.seed)), output, Format::Csv)?;
    Ok(ExitCode::SUCCESS)
}

pub fn simulate(path: &Path, y0: Option<&str>, grid: &str, mc: &McArgs, output: &OutputArgs) -> Res<ExitCode> {
    let m = load(path)?;
    m.params.ensure_valid()?;
    let p = m.params.dim();
    let times = parse_grid(grid)?;
    if times.iter().any(|&t| !(t > 0.0)) {
        return Err(usage("probe times must be positive"));
    }
    let fixed = y0.map(|s| parse_y0(Some(s), p)).transpose()?;
    let init = match &fixed {
        Some(y) => InitialState::Fixed(y.clone()),
        None => InitialState::Stationary { burn_in: None },
    };
    // Analytic E[σ²_t] needs the stationary mean; without it the column is empty.
    let sys = stationary_system(&m.params).ok();
    let curve = sys.as_ref().map(ForwardCurve::new).transpose()?;
    let horizon = times.iter().copied().fold(0.0, f64::max);
    let batch = run_paths(&m.params, &mc_config(mc, horizon, init), &times)?;

    let ynames: Vec<(String, String)> = (0..p).map(|i| (format!("mean_y{}", i + 1), format!("se_y{}", i + 1))).collect();
    let mut cols: Vec<(&str, usize)> = vec![
        ("t", 4),
        ("mean_sigma2", 6),
        ("se_sigma2", 6),
        ("exact_sigma2", 6),
        ("mean_exp_x", 6),
        ("se_exp_x", 6),
    ];
    for (a, b) in &ynames {
        cols.push((a.as_str(), 6));
        cols.push((b.as_str(), 6));
    }
    cols.push(("floored_steps", 0));
    let mut t = Table::new(format!("simulate_{}", slug(&m.label)), &cols);
    for (ti, &time) in batch.times.iter().enumerate() {
        let s2 = batch.estimate(ti, |s| s.sigma2);
        let ex = batch.estimate(ti, |s| s.x.exp());
        let exact = match (&curve, &fixed) {
            (Some(c), Some(y)) => Some(c.variance_at(y, time)?),
            (Some(c), None) => Some(c.sigma2_infty()),
            (None, _) => None,
        };
        let mut row = vec![
            Cell::Num(time),
            s2.mean.into(),
            s2.se.into(),
            exact.into(),
            ex.mean.into(),
            ex.se.into(),
        ];
        for i in 0..p {
            let e = batch.estimate(ti, |s| s.y[i]);
            row.push(e.mean.into());
            row.push(e.se.into());
        }
        row.push(batch.floored_steps.to_string().into());
        t.push(row);
    }
    finish(&[t], &provenance("simulate", &[&m], Some(mc.seed)), output, Format::Csv)?;
    Ok(ExitCode::SUCCESS)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids() {
        assert_eq!(parse_grid("0:1:3").unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(parse_grid("-0.1, 0 ,0.1").unwrap(), vec![-0.1, 0.0, 0.1]);
        assert!(matches!(parse_grid(""), Err(Failure::Usage(_))));
        assert!(matches!(parse_grid("0:1:0"), Err(Failure::Usage(_))));
        assert!(matches!(parse_grid("a,b"), Err(Failure::Usage(_))));
    }
}
