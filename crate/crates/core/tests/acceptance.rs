//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any
//! fails. Runs under `cargo test` (custom harness).

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use decoy_qkd::adversary_sim::{
    appendix_yield_ratio, run_simulation, run_simulation_with_threads, verify_bound, ChannelLaw, IntensityLaw,
    SimScenario, Source,
};
use decoy_qkd::decoy_bounds::{d1_lower, delta1_asymptotic, ObservedTallies, Selection, DEFAULT_SIGMA_MULT};
use decoy_qkd::key_rate::{binary_entropy, sweep_delta_m, SweepSpec};
use decoy_qkd::source_model::{coherent_bounds, IntensityInterval, SourceBounds};
use decoy_qkd::Interval;

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn table2_tallies() -> ObservedTallies {
    let m = 5.222e9;
    let sel = Selection::new(0.1, 0.4, 0.5).unwrap();
    ObservedTallies {
        pulses: 5_222_000_000,
        selection: sel,
        n0: (6.711e-6 * sel.p0 * m).round() as u64,
        nd: (4.611e-5 * sel.p * m).round() as u64,
        ns: (1.262e-4 * sel.pp * m).round() as u64,
        t0_signal: 0.0358,
        t0_decoy: 0.09098,
    }
}

fn appendix_ratio() -> Outcome {
    let start = Instant::now();
    let ratio = appendix_yield_ratio(0.01, 0.05, 10, 0.01, 5.0).unwrap();
    let elapsed = start.elapsed();
    outcome(
        ratio > 1.0025 && elapsed < Duration::from_millis(1),
        format!("ratio {ratio:.10} (> 1.0025), {:.1} us", elapsed.as_secs_f64() * 1e6),
    )
}

// Published rates in units of 1e-6, columns delta_M = 3%, 2.5%, ..., 0.
const PUBLISHED: [(&str, [f64; 7]); 4] = [
    ("R", [11.03, 12.09, 13.15, 14.19, 15.23, 16.26, 17.28]),
    ("R1", [1.536, 2.567, 3.591, 4.607, 5.616, 6.618, 7.614]),
    ("R2", [1.506, 2.537, 3.561, 4.577, 5.587, 6.589, 7.585]),
    ("R3", [1.475, 2.507, 3.531, 4.548, 5.557, 6.560, 7.556]),
];

fn rate_table() -> Outcome {
    let tallies = table2_tallies();
    let spec = SweepSpec::table_layout(0.2, 0.6);
    let start = Instant::now();
    let cells = sweep_delta_m(&tallies, &spec).unwrap();
    let elapsed = start.elapsed();
    let mut worst: f64 = 0.0;
    let mut worst_cell = String::new();
    for (row, published) in PUBLISHED {
        let got: Vec<_> = cells.iter().filter(|c| c.row == row).collect();
        assert_eq!(got.len(), published.len());
        for (c, want) in got.iter().zip(published) {
            let rel = (c.report.rate / 1e-6 - want).abs() / want;
            if rel > worst {
                worst = rel;
                worst_cell = format!("{row} at delta_m {}", c.delta_m);
            }
        }
    }
    outcome(
        worst <= 0.02 && elapsed < Duration::from_secs(5),
        format!(
            "{} cells, max rel dev {:.4} at {worst_cell} (<= 0.02), sweep {:.3} s",
            cells.len(),
            worst,
            elapsed.as_secs_f64()
        ),
    )
}

fn soundness_scenario(i: u64) -> (SimScenario, SourceBounds) {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed ^ i);
    let delta = [0.0, 0.01, 0.03][(i % 3) as usize];
    let eta_ratio = [1.0, 2.0, 5.0][((i / 3) % 3) as usize];
    let attack = i % 2 == 1;
    let eta = rng.random_range(0.02..0.2);
    let (intensity_law, channel_law) = if attack {
        (IntensityLaw::StrongWeakBlocks { delta }, ChannelLaw::StrongWeak { eta_weak: eta, eta_ratio })
    } else if delta > 0.0 {
        (IntensityLaw::UniformJitter { delta }, ChannelLaw::Uniform { eta })
    } else {
        (IntensityLaw::Stable, ChannelLaw::Uniform { eta })
    };
    let sc = SimScenario {
        pulses: 1_000_000,
        selection: Selection::new(0.1, 0.4, 0.5).unwrap(),
        decoy_mu: 0.2,
        signal_mu: 0.6,
        vacuum_mu: 0.0,
        intensity_law,
        channel_law,
        dark_rate: rng.random_range(1e-6..1e-4),
        misalignment: 0.01,
        block_len: 10_000,
        seed: i,
    };
    let bounds = coherent_bounds(
        IntensityInterval::relative(0.2, delta).unwrap(),
        IntensityInterval::relative(0.6, delta).unwrap(),
        IntensityInterval::exact(0.0).unwrap(),
    )
    .unwrap();
    (sc, bounds)
}

fn soundness() -> Outcome {
    let start = Instant::now();
    let mut passed = 0;
    let mut nontrivial = 0;
    let mut min_margin = f64::INFINITY;
    let mut first_failure = None;
    for i in 0..1000 {
        let (sc, bounds) = soundness_scenario(i);
        let result = run_simulation(&sc).and_then(|out| verify_bound(&out, &bounds, DEFAULT_SIGMA_MULT));
        match result {
            Ok(v) if v.pass => {
                passed += 1;
                if v.bound > 0.0 {
                    nontrivial += 1;
                }
                min_margin = min_margin.min(v.margin);
            }
            Ok(v) => {
                first_failure.get_or_insert(format!("seed {i}: bound {} > truth {}", v.bound, v.truth));
            }
            Err(e) => {
                first_failure.get_or_insert(format!("seed {i}: {e}"));
            }
        }
    }
    let elapsed = start.elapsed();
    let mut detail = format!(
        "{passed}/1000 PASS ({nontrivial} with a positive bound), min margin {min_margin:.4}, {:.1} s",
        elapsed.as_secs_f64()
    );
    if let Some(f) = first_failure {
        detail.push_str(&format!("; first failure {f}"));
    }
    outcome(passed == 1000 && elapsed < Duration::from_secs(600), detail)
}

/// Standard three-intensity vacuum+weak decoy bound with exact Poisson
/// sources, written out independently of the library.
fn y1_standard(mu: f64, mup: f64, s0: f64, s: f64, sp: f64) -> f64 {
    (mup * mup * s * mu.exp() - mu * mu * sp * mup.exp() - (mup * mup - mu * mu) * s0) / (mu * mup * (mup - mu))
}

fn rel_err(got: f64, want: f64) -> f64 {
    if want == 0.0 {
        got.abs()
    } else {
        ((got - want) / want).abs()
    }
}

fn error_free_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    let mut in_range = 0;
    for _ in 0..1000 {
        let mu = rng.random_range(0.05..0.4);
        let mup = rng.random_range(mu + 0.1..0.95);
        let y0 = 10f64.powf(rng.random_range(-7.0..-3.0));
        let eta = 10f64.powf(rng.random_range(-3.0..-0.3));
        let rate = |x: f64| 1.0 - (1.0 - y0) * (-eta * x).exp();
        let (s0, s, sp) = (y0, rate(mu), rate(mup));
        let bounds = SourceBounds::exact_poisson(mu, mup).unwrap();
        let y1 = y1_standard(mu, mup, s0, s, sp);

        let sel = Selection::new(0.2, 0.3, 0.5).unwrap();
        let d1 = d1_lower(sel.p * s, sel.pp * sp, s0, &bounds, sel).unwrap();
        worst = worst.max(rel_err(d1, y1.max(0.0)));

        let (dd, ds) = delta1_asymptotic(s0, s, sp, &bounds).unwrap();
        let want_d = (mu * (-mu).exp() * y1 / s).clamp(0.0, 1.0);
        let want_s = (mup * (-mup).exp() * y1 / sp).clamp(0.0, 1.0);
        worst = worst.max(rel_err(dd, want_d)).max(rel_err(ds, want_s));
        if y1 > 0.0 && want_s < 1.0 {
            in_range += 1;
        }
    }
    outcome(worst <= 1e-10, format!("1000 tuples ({in_range} unclamped), max rel err {worst:.2e} (<= 1e-10)"))
}

fn yield_equality() -> Outcome {
    let sc = SimScenario {
        pulses: 10_000_000,
        selection: Selection::new(0.1, 0.4, 0.5).unwrap(),
        decoy_mu: 0.2,
        signal_mu: 0.6,
        vacuum_mu: 0.0,
        intensity_law: IntensityLaw::Stable,
        channel_law: ChannelLaw::Uniform { eta: 0.1 },
        dark_rate: 1e-4,
        misalignment: 0.01,
        block_len: 100_000,
        seed: 5,
    };
    let out = run_simulation(&sc).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for k in 0..4 {
        let (yd, nd) = out.yield_of(k, Source::Decoy);
        let (ys, ns) = out.yield_of(k, Source::Signal);
        let pooled = (yd * nd as f64 + ys * ns as f64) / (nd + ns) as f64;
        let sigma = (pooled * (1.0 - pooled) * (1.0 / nd as f64 + 1.0 / ns as f64)).sqrt();
        let z = (yd - ys).abs() / sigma;
        pass &= z <= 5.0 && pooled > 0.0;
        parts.push(format!("k={k} {z:.2}sigma"));
    }
    outcome(pass, format!("{} (<= 5)", parts.join(", ")))
}

fn properties() -> Outcome {
    let mut failures = Vec::new();

    let mut entropy_ok = binary_entropy(0.0).unwrap() == 0.0 && (binary_entropy(0.5).unwrap() - 1.0).abs() <= 1e-12;
    for i in 0..=10_000 {
        let t = i as f64 / 10_000.0;
        let (a, b) = (binary_entropy(t).unwrap(), binary_entropy(1.0 - t).unwrap());
        entropy_ok &= (a - b).abs() <= 1e-12 && (0.0..=1.0 + 1e-12).contains(&a);
    }
    if !entropy_ok {
        failures.push("entropy");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut interval_ok = true;
    for _ in 0..100_000 {
        let a = rng.random_range(-1e3..1e3);
        let b = rng.random_range(-1e3..1e3);
        let floor = rng.random_range(-1e3..1e3);
        match Interval::new(a, b) {
            Ok(iv) => {
                interval_ok &= a <= b;
                let c = iv.clamp_below(floor);
                interval_ok &= c.lo <= c.hi && c.lo >= floor && c.lo >= iv.lo && c.hi >= iv.hi;
                interval_ok &= Interval::new(c.lo, c.hi).is_ok();
            }
            Err(_) => interval_ok &= a > b,
        }
    }
    interval_ok &= Interval::new(f64::NAN, 1.0).is_err() && Interval::new(0.0, f64::INFINITY).is_err();
    if !interval_ok {
        failures.push("interval");
    }

    let sc = SimScenario {
        pulses: 400_000,
        selection: Selection::new(0.1, 0.4, 0.5).unwrap(),
        decoy_mu: 0.2,
        signal_mu: 0.6,
        vacuum_mu: 0.0,
        intensity_law: IntensityLaw::UniformJitter { delta: 0.02 },
        channel_law: ChannelLaw::StrongWeak { eta_weak: 0.1, eta_ratio: 5.0 },
        dark_rate: 1e-5,
        misalignment: 0.02,
        block_len: 1_000,
        seed: 11,
    };
    let runs: Vec<String> = [1, 4, 16]
        .iter()
        .map(|&n| serde_json::to_string(&run_simulation_with_threads(&sc, n).unwrap()).unwrap())
        .collect();
    if !runs.windows(2).all(|w| w[0] == w[1]) {
        failures.push("determinism");
    }

    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            "entropy grid 1e4, intervals 1e5, threads 1/4/16 byte-identical".to_string()
        } else {
            format!("failed: {}", failures.join(", "))
        },
    )
}

fn main() {
    let criteria: [Criterion; 6] = [
        ("appendix counterexample ratio", appendix_ratio),
        ("rate table reproduction", rate_table),
        ("soundness over 1000 simulations", soundness),
        ("error-free reduction oracle", error_free_oracle),
        ("yield equality for stable sources", yield_equality),
        ("property suite", properties),
    ];
    let mut all = true;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let o = run();
        all &= o.pass;
        println!("criterion {} {name}: {} ({})", i + 1, if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    if !all {
        std::process::exit(1);
    }
}
