//! Statistics against reference values computed independently with scipy
//! 1.15 (`f_oneway`, `tukey_hsd`, `ttest_ind`, `ttest_rel`,
//! `studentized_range.sf`, `t.interval`) and frozen here. Shared by the
//! statistics tests and the acceptance run.

#![allow(dead_code)]

use pointcount_core::eval::stats::{
    mean_ci, one_way_anova, studentized_range_sf, t_two_sided, tukey_hsd, two_sample_t, StatsError, TestKind,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const G0: [f64; 5] = [24.5, 23.5, 26.4, 27.1, 29.9];
pub const G1: [f64; 5] = [28.4, 34.2, 29.5, 32.2, 30.1];
pub const G2: [f64; 5] = [26.1, 28.3, 24.3, 26.2, 27.8];

pub const A: [f64; 7] = [1.2, 3.4, 2.2, 5.1, 4.4, 3.3, 2.9];
pub const B: [f64; 5] = [2.1, 1.0, 1.5, 2.2, 3.0];
pub const C: [f64; 6] = [4.0, 5.5, 3.9, 6.1, 4.8, 5.0];

/// Tolerance on p-values against the frozen references.
pub const P_TOLERANCE: f64 = 1e-6;

fn stat_err(e: StatsError) -> String {
    e.to_string()
}

struct Tally {
    checked: usize,
    worst_p: f64,
}

impl Tally {
    fn close(&mut self, what: &str, got: f64, want: f64, tol: f64) -> Result<(), String> {
        self.checked += 1;
        if (got - want).abs() > tol {
            return Err(format!("{what}: {got} vs reference {want}"));
        }
        Ok(())
    }

    fn p(&mut self, what: &str, got: f64, want: f64) -> Result<(), String> {
        self.worst_p = self.worst_p.max((got - want).abs());
        self.close(what, got, want, P_TOLERANCE)
    }
}

/// Every frozen reference value. Returns how many were compared and the
/// largest p-value discrepancy.
pub fn check_references() -> Result<(usize, f64), String> {
    let mut t = Tally { checked: 0, worst_p: 0.0 };

    let r = one_way_anova(&[&G0, &G1, &G2]).map_err(stat_err)?;
    if r.test != TestKind::Anova || r.dof != (2, Some(12)) {
        return Err(format!("anova g: {:?} {:?}", r.test, r.dof));
    }
    t.close("anova g F", r.statistic, 7.137827822120864, 1e-9)?;
    t.p("anova g p", r.p_value, 0.009073317468563075)?;
    let r = one_way_anova(&[&A, &B, &C]).map_err(stat_err)?;
    if r.dof != (2, Some(15)) {
        return Err(format!("anova abc dof {:?}", r.dof));
    }
    t.close("anova abc F", r.statistic, 11.081855052071171, 1e-9)?;
    t.p("anova abc p", r.p_value, 0.00110864235153726)?;

    // group means 2, 3, 4; SSB = 3 * (1 + 0 + 1) = 6, SSW = 3 * 2 = 6
    // F = (6 / 2) / (6 / 6) = 3
    let r = one_way_anova(&[&[1.0, 2.0, 3.0], &[2.0, 3.0, 4.0], &[3.0, 4.0, 5.0]]).map_err(stat_err)?;
    t.close("hand anova F", r.statistic, 3.0, 1e-12)?;

    let pairs = tukey_hsd(&[&G0, &G1, &G2], None).map_err(stat_err)?;
    let expected = [
        (0.01444833, (0.950841, 8.249159)),
        (0.98031072, (-3.389159, 3.909159)),
        (0.02033114, (-7.989159, -0.690841)),
    ];
    if pairs.len() != 3 {
        return Err(format!("{} tukey pairs", pairs.len()));
    }
    for (r, (p, (lo, hi))) in pairs.iter().zip(expected) {
        if r.test != TestKind::TukeyPair || r.dof != (3, Some(12)) {
            return Err(format!("{}: {:?} {:?}", r.label, r.test, r.dof));
        }
        t.p(&format!("tukey {} p", r.label), r.p_value, p)?;
        let (l, h) = r.ci95.ok_or("tukey pair without interval")?;
        t.close(&format!("tukey {} ci low", r.label), l, lo, 1e-5)?;
        t.close(&format!("tukey {} ci high", r.label), h, hi, 1e-5)?;
    }

    let pairs = tukey_hsd(&[&A, &B, &C], Some(&["a", "b", "c"])).map_err(stat_err)?;
    let expected = [("a-b", 0.130639827), ("a-c", 0.0282371377), ("b-c", 0.000848840812)];
    for (r, (label, p)) in pairs.iter().zip(expected) {
        if r.label != label {
            return Err(format!("tukey label {} vs {label}", r.label));
        }
        t.p(&format!("tukey-kramer {label} p"), r.p_value, p)?;
    }

    let r = two_sample_t(&A, &B, false).map_err(stat_err)?;
    t.close("t unpaired", r.statistic, 1.9174437834838043, 1e-9)?;
    t.p("t unpaired p", r.p_value, 0.08416373498902441)?;
    let r2 = two_sample_t(&A[..5], &B, true).map_err(stat_err)?;
    t.close("t paired", r2.statistic, 1.9400824265546763, 1e-9)?;
    t.p("t paired p", r2.p_value, 0.12436558228959484)?;
    if r.dof != (10, None) || r2.dof != (4, None) {
        return Err(format!("t dof {:?} {:?}", r.dof, r2.dof));
    }

    for (q, k, dof, p) in [
        (3.5, 3, 12.0, 0.06999548527518362),
        (2.0, 2, 5.0, 0.21643722926968534),
        (4.2, 5, 30.0, 0.04272653822013739),
        (1.0, 3, 87.0, 0.7599502431203806),
        (3.0, 4, 1000.0, 0.14699333610477072),
        (5.0, 3, 2.0, 0.12742340267177144),
    ] {
        t.p(&format!("ptukey q={q} k={k} dof={dof}"), studentized_range_sf(q, k, dof), p)?;
    }

    let m = mean_ci(&[0.61, 0.72, 0.55, 0.80, 0.67]);
    let (lo, hi) = m.ci95.ok_or("mean without interval")?;
    t.close("mean ci low", lo, 0.5499368054753222, 1e-9)?;
    t.close("mean ci high", hi, 0.7900631945246779, 1e-9)?;

    // two-sided tails at the small-sample dof used for the distance tests
    for (stat, dof, p) in [(0.13, 48.0, 0.8971096969546778), (0.81, 58.0, 0.42125109959486395), (1.02, 58.0, 0.3119643278002163)] {
        t.p(&format!("t({dof})={stat} p"), t_two_sided(stat, dof), p)?;
    }
    Ok((t.checked, t.worst_p))
}

fn values(n: usize, offset: f64) -> Vec<f64> {
    (0..n).map(|i| offset + ((i * 37 % 11) as f64) / 10.0).collect()
}

/// Degrees of freedom for 3 groups of 30, 30 against 20 and 30 against 30.
pub fn check_dof() -> Result<(), String> {
    let (a, b, c) = (values(30, 0.0), values(30, 0.2), values(30, 0.1));
    let found = [
        one_way_anova(&[&a, &b, &c]).map_err(stat_err)?.dof,
        two_sample_t(&a, &values(20, 0.3), false).map_err(stat_err)?.dof,
        two_sample_t(&a, &b, false).map_err(stat_err)?.dof,
        tukey_hsd(&[&a, &b, &c], None).map_err(stat_err)?[0].dof,
    ];
    let want = [(2, Some(87)), (48, None), (58, None), (3, Some(87))];
    if found != want {
        return Err(format!("dof {found:?}, expected {want:?}"));
    }
    Ok(())
}

/// Two-group ANOVA against the pooled t-test on random samples. Returns
/// the largest relative gap between F and t squared.
pub fn check_f_is_t_squared(cases: usize, seed: u64) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let a: Vec<f64> = (0..rng.gen_range(2..25)).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let b: Vec<f64> = (0..rng.gen_range(2..25)).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let f = one_way_anova(&[&a, &b]).map_err(stat_err)?;
        let t = two_sample_t(&a, &b, false).map_err(stat_err)?;
        let gap = (f.statistic - t.statistic * t.statistic).abs() / f.statistic.max(1.0);
        worst = worst.max(gap);
        if gap > 1e-9 || (f.p_value - t.p_value).abs() > 1e-9 {
            return Err(format!("F {} vs t^2 {}", f.statistic, t.statistic * t.statistic));
        }
    }
    Ok(worst)
}
