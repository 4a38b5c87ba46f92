use pfbo_core::prior::HyperPrior;
use pfbo_core::pt::{train, PtConfig, PtVariant};

#[test]
fn sweep_full() {
    let hp = HyperPrior::default_for_dim(1);
    for (lr, warmup, beta2) in [(0.003, 2, 0.98), (0.005, 5, 0.98)] {
        let cfg = PtConfig {
            lr,
            warmup_epochs: warmup,
            beta2,
            ..PtConfig::smoke(1)
        }
        .with_variant(PtVariant::Pt);
        let (_, tel) = train::train(&cfg, &hp, 7).unwrap();
        let first = tel.first().unwrap().mean_ce;
        let last = tel.last().unwrap().mean_ce;
        eprintln!(
            "lr={} warmup={} beta2={}: first {:.3} last {:.3} drop {:.1}%",
            lr, warmup, beta2, first, last, 100.0 * (1.0 - last / first)
        );
    }
}
