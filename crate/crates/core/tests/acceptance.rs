//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails.

use std::process::ExitCode;

use finsler::calculus::{Geometry, Quantity};
use finsler::classify::{classify_basic, ClassificationReport, Settings};
use finsler::metric::{builtin, builtin_names, random_direction, random_expression_metric, MetricSpec, SampleSet};
use finsler::verify::oracle::sectional_curvature;
use finsler::verify::{check_oracle, verify_spec, Branch, IdentityCheck, Status, VerificationReport};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SAMPLES: usize = 20;
const CLASSIFY_SAMPLES: usize = 30;
const SEED: u64 = 1;

/// Expected verdicts, in the order of `Verdicts::named`.
const EXPECTED: [(&str, [bool; 9]); 7] = [
    ("euclidean2", [true; 9]),
    ("euclidean3", [true; 9]),
    ("ellipsoid-riemannian", [true, true, true, true, true, true, true, true, false]),
    ("sphere-projective", [true; 9]),
    ("randers-const-beta", [false, true, true, true, false, false, false, false, false]),
    ("funk-disk", [false, true, true, true, false, false, false, false, true]),
    ("quartic-minkowski", [false, false, true, true, true, true, true, true, true]),
];

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn(&Fixture) -> Outcome);

struct Fixture {
    specs: Vec<MetricSpec>,
    samples: Vec<SampleSet>,
    settings: Settings,
    reports: Vec<VerificationReport>,
}

impl Fixture {
    fn new() -> Self {
        let settings = Settings::default();
        let specs: Vec<MetricSpec> = builtin_names().into_iter().map(|n| builtin(n).unwrap()).collect();
        let samples: Vec<SampleSet> = specs.iter().map(|s| s.sample(SAMPLES, SEED).unwrap()).collect();
        let reports = run_all(&specs, &samples, &settings);
        Fixture {
            specs,
            samples,
            settings,
            reports,
        }
    }

    fn index(&self, name: &str) -> usize {
        self.specs.iter().position(|s| s.name == name).expect("shipped spec")
    }

    fn check(&self, spec: &str, id: &str) -> &IdentityCheck {
        self.reports[self.index(spec)]
            .checks
            .iter()
            .find(|c| c.id == id)
            .unwrap_or_else(|| panic!("{spec}: no check {id}"))
    }
}

fn run_all(specs: &[MetricSpec], samples: &[SampleSet], settings: &Settings) -> Vec<VerificationReport> {
    specs
        .iter()
        .zip(samples)
        .map(|(s, p)| verify_spec(s, p, settings, &[]).unwrap_or_else(|e| panic!("{}: {e}", s.name)))
        .collect()
}

fn describe(c: &IdentityCheck) -> String {
    format!(
        "{}/{}: {:?}, worst {:.3e} (tol {:.0e}) {:?}",
        c.spec, c.id, c.status, c.worst_residual, c.tolerance, c.notes
    )
}

/// Fails with the first offending check, or reports the worst residual.
fn all_pass<'a>(checks: impl IntoIterator<Item = &'a IdentityCheck>, limit: f64) -> Outcome {
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for c in checks {
        if c.status != Status::Pass || c.worst_residual > limit {
            return Err(describe(c));
        }
        worst = worst.max(c.worst_residual);
        count += 1;
    }
    Ok(format!("{count} checks, worst residual {worst:.3e} (limit {limit:.0e})"))
}

fn criterion_1(fx: &Fixture) -> Outcome {
    let checks = || fx.reports.iter().flat_map(|r| &r.checks);
    let jet = all_pass(checks().filter(|c| c.id.starts_with("ladder:")), 1e-9)?;
    let fd = all_pass(checks().filter(|c| c.id.starts_with("ladder-fd:")), 1e-4)?;
    Ok(format!("jet ladder: {jet}; fd ladder: {fd}"))
}

fn criterion_2(fx: &Fixture) -> Outcome {
    let mut worst_c: f64 = 0.0;
    for name in ["euclidean2", "euclidean3", "ellipsoid-riemannian", "sphere-projective"] {
        let i = fx.index(name);
        for p in &fx.samples[i].points {
            let mut geo = Geometry::new(&fx.specs[i], p, fx.settings.order).map_err(|e| e.to_string())?;
            let c = geo.norms(Quantity::Cartan).map_err(|e| e.to_string())?.scale_free;
            if c > 1e-10 {
                return Err(format!("{name}: |C| = {c:.3e} at {p:?}"));
            }
            worst_c = worst_c.max(c);
        }
    }
    let i = fx.index("sphere-projective");
    let spec = &fx.specs[i];
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let (mut worst_k, mut worst_oracle): (f64, f64) = (0.0, 0.0);
    for p in &fx.samples[i].points {
        let u = random_direction(&mut rng, spec.dim);
        let mut geo = Geometry::new(spec, p, fx.settings.order).map_err(|e| e.to_string())?;
        let k = geo.flag_curvature(&u).map_err(|e| e.to_string())?;
        let oracle = sectional_curvature(spec, p, &u, 1e-4).map_err(|e| e.to_string())?;
        if (k - 1.0).abs() > 1e-5 || (k - oracle).abs() > 1e-5 {
            return Err(format!("sphere flag curvature {k} (oracle {oracle}) at {p:?}, u = {u:?}"));
        }
        worst_k = worst_k.max((k - 1.0).abs());
        worst_oracle = worst_oracle.max((k - oracle).abs());
    }
    Ok(format!(
        "max |C| {worst_c:.3e}; {} sphere flags: max |K - 1| {worst_k:.3e}, max |K - oracle| {worst_oracle:.3e}",
        fx.samples[i].points.len()
    ))
}

fn matsumoto_norms(fx: &Fixture, name: &str) -> Result<Vec<f64>, String> {
    let i = fx.index(name);
    fx.samples[i]
        .points
        .iter()
        .map(|p| {
            let mut geo = Geometry::new(&fx.specs[i], p, fx.settings.order).map_err(|e| e.to_string())?;
            // M has y-degree -1, so the scale-free norm is |M|_g F.
            Ok(geo.norms(Quantity::Matsumoto).map_err(|e| e.to_string())?.scale_free)
        })
        .collect()
}

fn criterion_3(fx: &Fixture) -> Outcome {
    let mut worst: f64 = 0.0;
    for name in ["randers-const-beta", "funk-disk"] {
        let m = matsumoto_norms(fx, name)?;
        let w = m.iter().copied().fold(0.0, f64::max);
        if w > 1e-7 {
            return Err(format!("{name}: scale-free |M| = {w:.3e}"));
        }
        worst = worst.max(w);
    }
    let q = matsumoto_norms(fx, "quartic-minkowski")?;
    let large = q.iter().filter(|&&v| v >= 1e-2).count();
    let share = large as f64 / q.len() as f64;
    if share < 0.9 {
        return Err(format!("quartic: |M| F >= 1e-2 at only {large} of {} samples", q.len()));
    }
    Ok(format!(
        "Randers max |M| {worst:.3e}; quartic |M| F >= 1e-2 at {large}/{} samples",
        q.len()
    ))
}

fn criterion_4(fx: &Fixture) -> Outcome {
    let i = fx.index("funk-disk");
    let (mut dk, mut res): (f64, f64) = (0.0, 0.0);
    for p in &fx.samples[i].points {
        let mut geo = Geometry::new(&fx.specs[i], p, fx.settings.order).map_err(|e| e.to_string())?;
        let fit = geo.scalar_curvature_fit().map_err(|e| e.to_string())?;
        if (fit.k + 0.25).abs() > 1e-4 || fit.residual > 1e-6 {
            return Err(format!("K = {}, residual {:.3e} at {p:?}", fit.k, fit.residual));
        }
        dk = dk.max((fit.k + 0.25).abs());
        res = res.max(fit.residual);
    }
    Ok(format!("max |K + 1/4| {dk:.3e}, max fit residual {res:.3e}"))
}

const UNIVERSAL: [&str; 4] = ["Moeq1", "Moeq2", "Mbar-transport", "LemQ"];

fn criterion_5(fx: &Fixture) -> Outcome {
    let shipped = all_pass(
        fx.reports.iter().flat_map(|r| &r.checks).filter(|c| UNIVERSAL.contains(&c.id.as_str())),
        1e-6,
    )?;
    let filter: Vec<String> = UNIVERSAL.iter().map(|s| s.to_string()).collect();
    let mut random = Vec::new();
    for seed in 0..5u64 {
        let dim = 2 + (seed as usize % 2);
        let spec = random_expression_metric(seed, dim).map_err(|e| e.to_string())?;
        let samples = spec.sample(SAMPLES, SEED).map_err(|e| e.to_string())?;
        let report = verify_spec(&spec, &samples, &fx.settings, &filter).map_err(|e| format!("{}: {e}", spec.name))?;
        random.extend(report.checks);
    }
    if random.len() != 5 * UNIVERSAL.len() {
        return Err(format!("expected {} random-metric checks, got {}", 5 * UNIVERSAL.len(), random.len()));
    }
    let random = all_pass(&random, 1e-6)?;
    Ok(format!("shipped: {shipped}; random metrics: {random}"))
}

fn criterion_6(fx: &Fixture) -> Outcome {
    const CHAIN: [&str; 4] = ["Kikiso1", "AZeq1", "AZeq2", "Sijk"];
    let checks: Vec<&IdentityCheck> = ["funk-disk", "sphere-projective"]
        .iter()
        .flat_map(|s| CHAIN.iter().map(move |id| fx.check(s, id)))
        .collect();
    let passed = all_pass(checks, 1e-5)?;
    for id in CHAIN {
        let c = fx.check("ellipsoid-riemannian", id);
        if c.status != Status::Skipped || c.notes.is_empty() {
            return Err(format!("not skipped with a reason: {}", describe(c)));
        }
    }
    Ok(format!(
        "{passed}; skipped on ellipsoid-riemannian: {}",
        fx.check("ellipsoid-riemannian", "Kikiso1").notes[0]
    ))
}

fn criterion_7(fx: &Fixture) -> Outcome {
    let q = fx.check("quartic-minkowski", "S8");
    if q.status != Status::Degenerate || !q.branches().contains(&Branch::DegenerateDenominator) {
        return Err(describe(q));
    }
    let f = fx.check("funk-disk", "S8");
    if f.status != Status::Pass {
        return Err(describe(f));
    }
    let degenerate = q.points.iter().filter(|p| p.branch == Branch::DegenerateDenominator).count();
    Ok(format!(
        "quartic S8 degenerate at {degenerate}/{} points; funk S8 pass (worst {:.3e})",
        q.points.len(),
        f.worst_residual
    ))
}

fn classify_all(fx: &Fixture) -> Result<Vec<ClassificationReport>, String> {
    fx.specs
        .iter()
        .map(|s| {
            let samples = s.sample(CLASSIFY_SAMPLES, SEED).map_err(|e| e.to_string())?;
            classify_basic(s, &samples, &fx.settings).map_err(|e| format!("{}: {e}", s.name))
        })
        .collect()
}

fn criterion_8(fx: &Fixture) -> Outcome {
    let reports = classify_all(fx)?;
    for r in &reports {
        if !r.internal_errors.is_empty() {
            return Err(format!("{}: {:?}", r.spec, r.internal_errors));
        }
        let (_, expected) = EXPECTED.iter().find(|(n, _)| *n == r.spec).ok_or(format!("{} not in table", r.spec))?;
        for ((class, verdict), want) in r.verdicts.named().iter().zip(expected) {
            if verdict.holds != *want {
                return Err(format!(
                    "{}: {class} = {} (worst {:.3e}), expected {want}",
                    r.spec, verdict.holds, verdict.worst_residual
                ));
            }
        }
    }
    Ok(format!("{} specs match the expected table, no implication violations", reports.len()))
}

fn criterion_9(fx: &Fixture) -> Outcome {
    let spec = builtin("randers-const-beta").map_err(|e| e.to_string())?;
    let samples = spec.sample(5, SEED).map_err(|e| e.to_string())?;
    let checks = check_oracle(&spec, &samples, &fx.settings);
    if checks.is_empty() {
        return Err("no oracle checks".into());
    }
    all_pass(&checks, 1e-4)
}

fn criterion_10(fx: &Fixture) -> Outcome {
    let json = |reports: &[VerificationReport], classes: &[ClassificationReport]| {
        serde_json::to_string(&(reports, classes)).expect("reports serialize")
    };
    let first = json(&fx.reports, &classify_all(fx)?);
    let again = run_all(&fx.specs, &fx.samples, &fx.settings);
    let second = json(&again, &classify_all(fx)?);
    if first != second {
        return Err("JSON reports differ between runs".into());
    }
    Ok(format!("{} bytes identical across two runs", first.len()))
}

fn main() -> ExitCode {
    let fx = Fixture::new();
    let criteria: [Criterion; 10] = [
        ("ladder on jet and FD paths", criterion_1),
        ("Riemannian reduction", criterion_2),
        ("Matsumoto torsion of Randers metrics", criterion_3),
        ("Funk flag curvature", criterion_4),
        ("universal identities", criterion_5),
        ("scalar curvature chain", criterion_6),
        ("stretch chain branches", criterion_7),
        ("classification table", criterion_8),
        ("oracle equivalence", criterion_9),
        ("determinism", criterion_10),
    ];
    let mut failed = 0;
    for (k, (title, run)) in criteria.iter().enumerate() {
        match run(&fx) {
            Ok(detail) => println!("criterion {} ({title}): PASS {detail}", k + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} ({title}): FAIL {detail}", k + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} of {} criteria failed", criteria.len());
        ExitCode::FAILURE
    } else {
        println!("all {} criteria passed", criteria.len());
        ExitCode::SUCCESS
    }
}
