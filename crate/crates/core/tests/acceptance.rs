//! Acceptance suite: one test per exit criterion, each printing a PASS line
//! with its measured numbers. Tolerances and runtime budgets are pinned in
//! the assertions.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use psychoprobe_core::gateway::{SyntheticRespondentConfig, WordingMode};
use psychoprobe_core::parser::{parse_response, Disposition};
use psychoprobe_core::persona::{render_silicon_persona, SiliconRecord, TemplateSpec, TraitScores};
use psychoprobe_core::pipeline::{
    analyze_stage, parse_stage, score_stage, simulate, synthetic_personas, AnalyzeStageInputs,
    OutDir, RunConfig,
};
use psychoprobe_core::prompt::{build_batch, ModelConfig, PromptTemplate};
use psychoprobe_core::report::{render_text, AnalyzeOptions, RELIABILITY_THRESHOLD};
use psychoprobe_core::scales::{builtin_instruments, ResponseRange, ScoreTable};
use psychoprobe_core::stats::bias::{format_bias_summary, trait_bias};
use psychoprobe_core::stats::cfa::{
    fit_cfa, fml_and_gradient, CfaFailure, CfaOptions, CfaSpec,
};
use psychoprobe_core::stats::covariance::CovarianceMatrix;
use psychoprobe_core::stats::fit_indices::{fit_indices, format_index};
use psychoprobe_core::stats::glb::greatest_lower_bound;
use psychoprobe_core::stats::reliability::cronbach_alpha;
use psychoprobe_core::stats::welch::welch_t_test;

fn cov(values: DMatrix<f64>, n: usize) -> CovarianceMatrix {
    CovarianceMatrix {
        labels: (0..values.nrows()).map(|i| format!("x{i}")).collect(),
        values,
        n,
    }
}

#[test]
fn acceptance_01_closed_form_reliability() {
    let started = Instant::now();
    let two_item = cov(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]), 100);
    let alpha = cronbach_alpha(&two_item).unwrap();
    assert!((alpha - 2.0 / 3.0).abs() < 1e-9, "alpha = {alpha}");
    let glb = greatest_lower_bound(&two_item).unwrap();
    assert!((glb - 2.0 / 3.0).abs() < 1e-6, "glb = {glb}");
    let independent = cov(DMatrix::identity(3, 3), 100);
    let alpha_zero = cronbach_alpha(&independent).unwrap();
    assert!(alpha_zero.abs() < 1e-12, "alpha = {alpha_zero}");
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}");
    println!(
        "ACCEPT 01 PASS closed-form reliability: alpha {alpha:.9}, glb {glb:.7}, \
         independent alpha {alpha_zero:.2e} in {elapsed:?}"
    );
}

#[test]
fn acceptance_02_alpha_glb_ordering() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_101);
    for trial in 0..1000 {
        let p = rng.gen_range(3..=20);
        let a = DMatrix::from_fn(p, p + 2, |_, _| rng.gen_range(-1.0..1.0));
        let values = &a * a.transpose() + DMatrix::identity(p, p) * 0.05;
        let matrix = cov(values, 100);
        let alpha = cronbach_alpha(&matrix).unwrap();
        let glb = greatest_lower_bound(&matrix).unwrap();
        assert!(
            alpha <= glb + 1e-6,
            "trial {trial} (p={p}): alpha {alpha} > glb {glb}"
        );
        assert!(glb <= 1.0 + 1e-6, "trial {trial}: glb {glb} above 1");
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 30.0, "took {elapsed:?}");
    println!("ACCEPT 02 PASS alpha <= glb <= 1 on 1000 random PSD matrices in {elapsed:?}");
}

/// The BFI loading pattern: 5 factors over 44 items in subscale order.
fn bfi_pattern_spec() -> CfaSpec {
    let instruments = builtin_instruments();
    let bfi = instruments.iter().find(|i| i.id == "BFI").unwrap();
    CfaSpec {
        factor_names: bfi.subscales.iter().map(|s| s.id.clone()).collect(),
        item_labels: bfi.items.iter().map(|i| format!("BFI_{}", i.index)).collect(),
        item_factor: bfi
            .items
            .iter()
            .map(|item| {
                bfi.subscales.iter().position(|s| s.id == item.subscale).unwrap()
            })
            .collect(),
        excluded_items: Vec::new(),
    }
}

fn simulate_factor_rows(
    spec: &CfaSpec,
    loading: f64,
    phi_off: f64,
    n: usize,
    seed: u64,
) -> Vec<Vec<f64>> {
    let m = spec.factor_names.len();
    let p = spec.item_labels.len();
    let mut phi = DMatrix::identity(m, m);
    for i in 0..m {
        for j in 0..m {
            if i != j {
                phi[(i, j)] = phi_off;
            }
        }
    }
    let chol = phi.cholesky().unwrap().l();
    let residual_sd = (1.0 - loading * loading).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let z = nalgebra::DVector::from_fn(m, |_, _| {
                rng.sample::<f64, _>(rand_distr::StandardNormal)
            });
            let eta = &chol * z;
            (0..p)
                .map(|i| {
                    let e: f64 = rng.sample(rand_distr::StandardNormal);
                    loading * eta[spec.item_factor[i]] + residual_sd * e
                })
                .collect()
        })
        .collect()
}

fn sample_covariance(rows: &[Vec<f64>], labels: Vec<String>) -> CovarianceMatrix {
    let n = rows.len();
    let p = rows[0].len();
    let means: Vec<f64> =
        (0..p).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let mut values = DMatrix::zeros(p, p);
    for row in rows {
        for i in 0..p {
            for j in 0..p {
                values[(i, j)] += (row[i] - means[i]) * (row[j] - means[j]);
            }
        }
    }
    values /= n as f64 - 1.0;
    CovarianceMatrix { labels, values, n }
}

#[test]
fn acceptance_03_cfa_recovery() {
    let started = Instant::now();
    let spec = bfi_pattern_spec();
    let rows = simulate_factor_rows(&spec, 0.7, 0.3, 10_000, 31);
    let s = sample_covariance(&rows, spec.item_labels.clone());
    let result = fit_cfa(&s, &spec, &CfaOptions::default()).unwrap();
    assert!(result.converged, "failure: {:?}", result.failure);
    for (label, loading) in spec.item_labels.iter().zip(&result.loadings) {
        assert!((loading - 0.7).abs() < 0.05, "{label}: loading {loading}");
    }
    for i in 0..5 {
        for j in 0..5 {
            if i != j {
                assert!(
                    (result.phi[i][j] - 0.3).abs() < 0.05,
                    "phi[{i}][{j}] = {}",
                    result.phi[i][j]
                );
            }
        }
    }
    let indices = fit_indices(&result, &s).unwrap();
    assert!(indices.rmsea <= 0.05, "RMSEA = {}", indices.rmsea);
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 120.0, "took {elapsed:?}");
    println!(
        "ACCEPT 03 PASS CFA recovery: max loading error {:.4}, RMSEA {:.4} in {elapsed:?}",
        result
            .loadings
            .iter()
            .map(|l| (l - 0.7).abs())
            .fold(0.0f64, f64::max),
        indices.rmsea
    );
}

#[test]
fn acceptance_04_perfect_fit_fixed_point() {
    // Fit once on simulated data, then feed the model-implied covariance back.
    let spec = bfi_pattern_spec();
    let rows = simulate_factor_rows(&spec, 0.7, 0.3, 2_000, 77);
    let s = sample_covariance(&rows, spec.item_labels.clone());
    let first = fit_cfa(&s, &spec, &CfaOptions::default()).unwrap();
    assert!(first.converged);

    let implied = cov_from_result(&first, s.n);
    let second = fit_cfa(&implied, &spec, &CfaOptions::default()).unwrap();
    assert!(second.converged);
    let chi = second.chi_square.unwrap();
    assert!(chi < 1e-6, "chi-square = {chi}");
    let indices = fit_indices(&second, &implied).unwrap();
    assert!((indices.gfi - 1.0).abs() < 1e-6, "GFI = {}", indices.gfi);
    assert_eq!(indices.rmsea, 0.0, "RMSEA = {}", indices.rmsea);
    println!(
        "ACCEPT 04 PASS perfect-fit fixed point: chi2 {chi:.2e}, GFI {}, RMSEA {}",
        indices.gfi, indices.rmsea
    );
}

fn cov_from_result(
    result: &psychoprobe_core::stats::cfa::CfaResult,
    n: usize,
) -> CovarianceMatrix {
    CovarianceMatrix {
        labels: result.spec.item_labels.clone(),
        values: result.implied_covariance(),
        n,
    }
}

#[test]
fn acceptance_05_gradient_check() {
    let spec = bfi_pattern_spec();
    let rows = simulate_factor_rows(&spec, 0.6, 0.2, 500, 13);
    let s = sample_covariance(&rows, spec.item_labels.clone());
    let q = spec.n_parameters();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = spec.item_labels.len();
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let params: Vec<f64> = (0..q)
            .map(|i| {
                if i < p {
                    rng.gen_range(0.3..0.9)
                } else if i < 2 * p {
                    rng.gen_range(-1.2..0.0)
                } else {
                    rng.gen_range(-0.3..0.3)
                }
            })
            .collect();
        let (_, analytic) = fml_and_gradient(&s, &spec, &params).expect("PD region");
        let h = 1e-5;
        let mut numeric = vec![0.0; q];
        for j in 0..q {
            let mut plus = params.clone();
            let mut minus = params.clone();
            plus[j] += h;
            minus[j] -= h;
            let (fp, _) = fml_and_gradient(&s, &spec, &plus).unwrap();
            let (fm, _) = fml_and_gradient(&s, &spec, &minus).unwrap();
            numeric[j] = (fp - fm) / (2.0 * h);
        }
        let err: f64 = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let scale: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt().max(1.0);
        let relative = err / scale;
        worst = worst.max(relative);
        assert!(relative < 1e-5, "relative gradient error {relative}");
    }
    println!("ACCEPT 05 PASS gradient check: worst relative error {worst:.2e} at 10 points");
}

#[test]
fn acceptance_06_non_pd_failure_path() {
    // Two factor blocks whose latent covariance must exceed 1 to explain the
    // data: a valid covariance matrix (residuals keep it PD) that drives the
    // fitted factor covariance outside the PSD cone.
    let spec = CfaSpec {
        factor_names: vec!["F1".into(), "F2".into()],
        item_labels: (1..=6).map(|i| format!("x{i}")).collect(),
        item_factor: vec![0, 0, 0, 1, 1, 1],
        excluded_items: Vec::new(),
    };
    let mut sigma = DMatrix::zeros(6, 6);
    let loading = 0.7;
    let phi_cross = 1.04;
    for i in 0..6 {
        for j in 0..6 {
            let same_block = (i < 3) == (j < 3);
            sigma[(i, j)] = loading * loading * if same_block { 1.0 } else { phi_cross };
        }
        sigma[(i, i)] = loading * loading + 0.3;
    }

    // Engineer row data whose sample covariance equals sigma exactly:
    // whiten raw noise, recolor by chol(sigma).
    let n = 200;
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    let raw = DMatrix::from_fn(n, 6, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
    let centered = {
        let means = raw.row_mean();
        let mut c = raw.clone();
        for mut row in c.row_iter_mut() {
            row -= &means;
        }
        c
    };
    let sample = centered.transpose() * &centered / (n as f64 - 1.0);
    let whitener = sample.cholesky().unwrap().l().try_inverse().unwrap();
    let recolor = sigma.clone().cholesky().unwrap().l();
    let data = centered * whitener.transpose() * recolor.transpose();
    let rows: Vec<Vec<f64>> = data.row_iter().map(|r| r.iter().copied().collect()).collect();
    let s = sample_covariance(&rows, spec.item_labels.clone());
    for i in 0..6 {
        for j in 0..6 {
            assert!(
                (s.values[(i, j)] - sigma[(i, j)]).abs() < 1e-10,
                "engineered covariance drifted at ({i},{j})"
            );
        }
    }

    let result = fit_cfa(&s, &spec, &CfaOptions::default()).unwrap();
    assert!(!result.converged, "the degenerate fit must be reported, not masked");
    let failure = result.failure.clone().expect("diagnostic present");
    match &failure {
        CfaFailure::NonPositiveDefinite { matrix, eigenvalue } => {
            assert!(matrix.contains("covariance"), "diagnostic names the matrix: {matrix}");
            assert!(*eigenvalue < 0.0, "diagnostic names a negative eigenvalue");
        }
        other => panic!("expected the non-PD diagnostic, got {other}"),
    }

    // The reporting path carries the failure as a row-less table entry
    // instead of aborting: fit indices are absent, the failure text present.
    assert!(fit_indices(&result, &s).is_err());
    let report = psychoprobe_core::report::AnalysisReport {
        run_id: "acceptance-06".into(),
        missing_policy: "listwise".into(),
        n_personas: n,
        reliability: Vec::new(),
        score_correlations: psychoprobe_core::stats::correlation::correlation_matrix(&[]),
        intercorrelations: None,
        criterion_validity: None,
        frequencies: None,
        cfa: vec![psychoprobe_core::report::CfaSection {
            instrument_id: "ENGINEERED".into(),
            excluded_items: Vec::new(),
            result: Some(result),
            fit: None,
            robust_se: None,
            error: None,
        }],
        trait_bias: None,
        bias_correlates: None,
    };
    let text = render_text(&report);
    assert!(
        text.contains("not positive definite (one eigenvalue was negative"),
        "report must carry the diagnostic:\n{text}"
    );
    assert!(!text.contains("ENGINEERED (acceptance-06)  ."), "no fit row for the failed model");
    println!("ACCEPT 06 PASS non-PD failure path: {failure}");
}

#[test]
fn acceptance_07_parser_corpus() {
    let range = ResponseRange { low: 1, high: 5 };
    let corpus: [(&str, Disposition, Option<i32>); 20] = [
        // bare digits
        ("1", Disposition::Parsed, Some(1)),
        ("3", Disposition::Parsed, Some(3)),
        ("5", Disposition::Parsed, Some(5)),
        ("  2\n", Disposition::Parsed, Some(2)),
        ("4.", Disposition::Parsed, Some(4)),
        // embedded digits
        ("I would say 4 because it fits me.", Disposition::Parsed, Some(4)),
        ("My answer is 2.", Disposition::Parsed, Some(2)),
        ("Definitely a 5 for me.", Disposition::Parsed, Some(5)),
        ("answer: 3", Disposition::Parsed, Some(3)),
        // no digits at all
        ("I prefer not to answer.", Disposition::NoDigit, None),
        ("Strongly agree.", Disposition::NoDigit, None),
        ("", Disposition::NoDigit, None),
        ("n/a", Disposition::NoDigit, None),
        // out-of-range first digits
        ("7", Disposition::OutOfRange, None),
        ("0 stars", Disposition::OutOfRange, None),
        ("My score is 9.", Disposition::OutOfRange, None),
        ("8 out of ten", Disposition::OutOfRange, None),
        // the "1 to 5" restatement hazard: the first digit wins
        ("On a scale of 1 to 5, I pick 5.", Disposition::Parsed, Some(1)),
        ("Between 1 and 5 I'd go with 4.", Disposition::Parsed, Some(1)),
        ("I rate it 10", Disposition::Parsed, Some(1)),
    ];
    let mut counts = BTreeMap::new();
    for (text, expected_disposition, expected_value) in corpus {
        let parsed = parse_response(text, range);
        assert_eq!(parsed.disposition, expected_disposition, "text: {text:?}");
        assert_eq!(parsed.value, expected_value, "text: {text:?}");
        *counts.entry(parsed.disposition).or_insert(0usize) += 1;
    }
    let total: usize = counts.values().sum();
    assert_eq!(total, 20, "disposition counts must partition the corpus");
    println!("ACCEPT 07 PASS parser corpus: 20/20 dispositions agree ({counts:?})");
}

#[test]
fn acceptance_08_batch_arithmetic() {
    let template = PromptTemplate::builtin();
    let instruments = builtin_instruments();
    let total_items: usize = instruments.iter().map(|i| i.items.len()).sum();
    assert_eq!(total_items, 104);

    let generic = synthetic_personas(150);
    let silicon = synthetic_personas(1000);
    let model_a = ModelConfig::profile("gpt-3.5-turbo-1106");
    let model_b = ModelConfig::profile("gpt-4-1106-preview");

    let generic_jobs =
        build_batch(&template, &generic, &instruments, std::slice::from_ref(&model_a)).unwrap();
    assert_eq!(generic_jobs.len(), 15_600);
    let silicon_jobs =
        build_batch(&template, &silicon, &instruments, std::slice::from_ref(&model_a)).unwrap();
    assert_eq!(silicon_jobs.len(), 104_000);

    let mut everyone = generic;
    everyone.extend(synthetic_personas_offset(1000, 150));
    let all = build_batch(
        &template,
        &everyone,
        &instruments,
        &[model_a.clone(), model_b.clone()],
    )
    .unwrap();
    assert_eq!(all.len(), 239_200);
    println!("ACCEPT 08 PASS batch arithmetic: 15600 + 104000 per model, 239200 total");
}

fn synthetic_personas_offset(n: usize, offset: usize) -> Vec<psychoprobe_core::PersonaText> {
    let mut personas = synthetic_personas(n + offset);
    personas.drain(..offset);
    personas
}

#[test]
fn acceptance_09_end_to_end_dry_run() {
    let started = Instant::now();
    let instruments = builtin_instruments();
    let template = PromptTemplate::builtin();
    let personas = synthetic_personas(150);
    let model = ModelConfig::profile("synthetic-model");

    let run_dry = |loading: f64, seed: u64| {
        let dir = tempfile::tempdir().unwrap();
        let out = OutDir::new(dir.path()).unwrap();
        let residual = (1.0 - loading * loading).max(0.04).sqrt();
        let synth = SyntheticRespondentConfig::from_instruments(
            &instruments,
            loading,
            residual,
            seed,
            WordingMode::BareDigit,
        );
        let mut params = BTreeMap::new();
        params.insert("loading".to_string(), loading.to_string());
        params.insert("seed".to_string(), seed.to_string());
        let config = RunConfig::new("simulate", params);
        let summary =
            simulate(&out, &config, &template, &personas, &instruments, &model, synth).unwrap();
        assert_eq!(summary.jobs, 15_600, "150 personas x 104 items");
        assert_eq!(summary.failures, 0);

        parse_stage(&out, &instruments, Default::default()).unwrap();
        score_stage(&out, &instruments, Default::default()).unwrap();
        let inputs = AnalyzeStageInputs {
            instruments: &instruments,
            human_scores: None,
            covariates: None,
            compare_scores: None,
            options: AnalyzeOptions::default(),
        };
        let report = analyze_stage(&out, &inputs).unwrap();
        (report, dir)
    };

    // High-communality generator: every subscale reliable, BFI CFA converges.
    let (high, _dir_high) = run_dry(0.8, 404);
    assert_eq!(high.reliability.len(), 13);
    for row in &high.reliability {
        let alpha = row.alpha.expect("alpha defined");
        let omega = row.omega.unwrap_or_else(|| {
            panic!("omega missing for {}.{}: {:?}", row.instrument_id, row.subscale_id, row.notes)
        });
        let glb = row.glb.expect("glb defined");
        assert!(
            alpha >= RELIABILITY_THRESHOLD
                && omega >= RELIABILITY_THRESHOLD
                && glb >= RELIABILITY_THRESHOLD,
            "{}.{}: alpha {alpha:.3}, omega {omega:.3}, glb {glb:.3}",
            row.instrument_id,
            row.subscale_id
        );
        assert!(!row.below_threshold);
    }
    let bfi_cfa = high.cfa.iter().find(|s| s.instrument_id == "BFI").unwrap();
    assert!(
        bfi_cfa.result.as_ref().is_some_and(|r| r.converged),
        "BFI CFA must converge: {:?} {:?}",
        bfi_cfa.error,
        bfi_cfa.result.as_ref().and_then(|r| r.failure.clone())
    );

    // Zero-loading generator: noise only, everything flagged.
    let (zero, _dir_zero) = run_dry(0.0, 404);
    for row in &zero.reliability {
        let alpha = row.alpha.expect("alpha defined");
        assert!(
            alpha < 0.15,
            "{}.{}: alpha {alpha:.3} should collapse without common factors",
            row.instrument_id,
            row.subscale_id
        );
        assert!(row.below_threshold, "{}.{} must be flagged", row.instrument_id, row.subscale_id);
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 300.0, "took {elapsed:?}");
    println!(
        "ACCEPT 09 PASS end-to-end dry run: 13/13 subscales >= .70 (high) and < .15 (zero) \
         in {elapsed:?}"
    );
}

#[test]
fn acceptance_10_welch() {
    // Equal n, exactly equal variances: pooled df, exactly.
    let a: Vec<f64> = (0..1000).map(|i| (i % 37) as f64 * 0.25).collect();
    let b: Vec<f64> = a.iter().map(|x| x + 3.0).collect();
    let pooled = welch_t_test(&a, &b).unwrap();
    assert_eq!(pooled.df, 1998.0, "df must be exactly 2n-2");

    // Cross-check against an independent reference implementation
    // (scipy.stats.ttest_ind with equal_var=False on these exact samples).
    let a = [12.9, 10.2, 13.7, 11.1, 14.0, 12.4, 10.9, 13.1];
    let b = [10.1, 9.8, 12.0, 11.4, 10.6, 9.9];
    let result = welch_t_test(&a, &b).unwrap();
    assert!((result.t - 2.695_751_752_899_869).abs() < 1e-6, "t = {}", result.t);
    assert!((result.df - 11.795_490_680_143_288).abs() < 1e-6, "df = {}", result.df);
    assert!((result.p - 0.019_717_250_303_515).abs() < 1e-6, "p = {}", result.p);
    println!(
        "ACCEPT 10 PASS Welch: pooled df exact, reference match t={:.6} p={:.6}",
        result.t, result.p
    );
}

#[test]
fn acceptance_11_trait_bias() {
    let traits: Vec<String> = ["E", "A", "C", "N", "O"].iter().map(|s| s.to_string()).collect();
    let table = ScoreTable {
        persona_ids: vec!["p1".into(), "p2".into()],
        columns: traits.clone(),
        values: vec![vec![Some(3.0); 5], vec![Some(4.0); 5]],
    };
    let identical = trait_bias(&table, &table).unwrap();
    assert_eq!(identical.grand_mean, Some(0.0));

    // Hand-built 3-persona fixture; per-trait means by hand arithmetic.
    let human = ScoreTable {
        persona_ids: vec!["p1".into(), "p2".into(), "p3".into()],
        columns: vec!["E".into(), "N".into()],
        values: vec![
            vec![Some(3.2), Some(2.0)],
            vec![Some(4.0), Some(3.5)],
            vec![Some(2.8), Some(5.0)],
        ],
    };
    let llm = ScoreTable {
        persona_ids: human.persona_ids.clone(),
        columns: human.columns.clone(),
        values: vec![
            vec![Some(2.5), Some(2.0)],
            vec![Some(4.5), Some(2.5)],
            vec![Some(2.8), Some(4.0)],
        ],
    };
    let bias = trait_bias(&human, &llm).unwrap();
    // |deltas|: E = .7, .5, 0 -> mean .4; N = 0, 1, 1 -> mean 2/3.
    assert!((bias.per_trait[0].mean.unwrap() - 0.4).abs() < 1e-12);
    assert!((bias.per_trait[1].mean.unwrap() - 2.0 / 3.0).abs() < 1e-12);

    // Rendering in the paper's reporting form.
    assert_eq!(format_bias_summary(Some(0.63), Some(0.25)), "M=.63 (SD=.25)");
    let rendered = format_bias_summary(bias.grand_mean, bias.grand_sd);
    assert!(rendered.starts_with("M=."), "rendered: {rendered}");
    println!("ACCEPT 11 PASS trait bias: fixture means exact, summary {rendered}");
}

#[test]
fn acceptance_12_silicon_rendering() {
    let spec = TemplateSpec::builtin();
    let mut values = BTreeMap::new();
    values.insert("age".to_string(), "26".to_string());
    values.insert("n_sib".to_string(), "6 or more".to_string());
    values.insert("rstat_1".to_string(), "no".to_string());
    let record = SiliconRecord {
        values,
        traits: TraitScores { bfi_e: 3.0, bfi_a: 3.0, bfi_c: 3.0, bfi_n: 3.0, bfi_o: 3.0 },
    };
    let persona = render_silicon_persona(&record, &spec).unwrap();
    assert_eq!(
        persona.text,
        "I am 26 years old. I have more than 5 siblings. \
         I am currently not in an intimate relationship."
    );
    assert!(persona.text.contains("I am 26 years old."));
    assert!(persona.text.contains("I have more than 5 siblings."));
    println!("ACCEPT 12 PASS silicon rendering byte-exact: {}", persona.text);
}

#[test]
fn fit_table_renders_like_the_published_layout() {
    // Companion check for the report formatting: two-decimal, leading-dot
    // indices, e.g. a row reading ".81 .75 .06".
    let row = format!(
        "{} {} {}",
        format_index(0.8123),
        format_index(0.7489),
        format_index(0.0634)
    );
    assert_eq!(row, ".81 .75 .06");
}
