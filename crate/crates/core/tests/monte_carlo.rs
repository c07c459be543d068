//! Seeded Monte Carlo checks of size, power and consistency.

use mixorder::harness::fwer_oracle;
use mixorder::order_test::{random_split, SplitTester, TestConfig, Variant};
use mixorder::seed::{derive, derive_rng, rng_from};
use mixorder::stp::{information_criteria, run_stp_on_plan, AlphaSchedule};
use mixorder::{sample, Dataset, FitConfig, GaussianComponent, MixtureParams};

fn standard_normal() -> MixtureParams {
    MixtureParams::single(GaussianComponent::univariate(0.0, 1.0).unwrap())
}

fn separated() -> MixtureParams {
    MixtureParams::new(
        vec![0.5, 0.5],
        vec![
            GaussianComponent::univariate(-5.0, 1.0).unwrap(),
            GaussianComponent::univariate(5.0, 1.0).unwrap(),
        ],
    )
    .unwrap()
}

fn draw(params: &MixtureParams, n: usize, i: u64) -> (Dataset, mixorder::order_test::SplitPlan) {
    let data = sample(params, n, &mut derive_rng(1234, 1, i)).unwrap();
    let plan = random_split(n, n / 2, &mut derive_rng(1234, 2, i)).unwrap();
    (data, plan)
}

fn cfg(l: usize, variant: Variant, i: u64) -> TestConfig {
    TestConfig {
        l,
        variant,
        fit: FitConfig::default().with_seed(derive(99, 3, i)),
    }
}

#[test]
fn split_test_keeps_its_size_under_the_null() {
    let reps = 200;
    let mut kept = 0;
    for i in 0..reps {
        let (data, plan) = draw(&standard_normal(), 1000, i);
        let out = SplitTester::new(&data, &plan, cfg(1, Variant::Split1, i))
            .unwrap()
            .test(1)
            .unwrap();
        if out.p > 0.05 {
            kept += 1;
        }
    }
    assert!(kept >= 190, "only {kept} of {reps} kept");
}

#[test]
fn split_test_rejects_an_easy_alternative() {
    let mut rejected = 0;
    for i in 0..100 {
        let (data, plan) = draw(&separated(), 2000, i);
        let mut tester = SplitTester::new(&data, &plan, cfg(1, Variant::Split1, i)).unwrap();
        if tester.split_log(1, 1).unwrap() > 20f64.ln() {
            rejected += 1;
        }
    }
    assert!(rejected >= 99, "{rejected}");
}

#[test]
fn stp_finds_two_well_separated_components() {
    let schedule = AlphaSchedule::Fixed { alpha: 0.05 };
    let mut exact = 0;
    for i in 0..100 {
        let (data, plan) = draw(&separated(), 2000, i);
        let out = run_stp_on_plan(&data, &plan, &cfg(2, Variant::Swapped, i), &schedule, 20).unwrap();
        assert!(out.g_hat <= 2, "replicate {i}: g_hat = {}", out.g_hat);
        assert_eq!(out.g_hat, out.closed_testing_g_hat());
        exact += usize::from(out.g_hat == 2);
    }
    assert!(exact >= 95, "{exact}");
}

#[test]
fn bic_is_consistent_on_an_easy_mixture() {
    let mut hits = 0;
    for i in 0..100 {
        let data = sample(&separated(), 2000, &mut rng_from(5000 + i)).unwrap();
        let table = information_criteria(&data, 5, &FitConfig::default().with_seed(i)).unwrap();
        hits += usize::from(table.g_bic == Some(2));
    }
    assert!(hits >= 95, "{hits}");
}

#[test]
fn composite_null_fwer_is_controlled() {
    let bound = 0.05 + 3.0 * (0.05f64 * 0.95 / 400.0).sqrt();
    let est = fwer_oracle(&separated(), 250, 250, Variant::Swapped, 1, 0.05, 400, 31).unwrap();
    assert_eq!(est.r, 400);
    assert!(est.rate <= bound, "{est:?}");
}
