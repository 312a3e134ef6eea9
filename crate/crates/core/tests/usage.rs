use pottab::bayes::{draw_measure, AssociationModel, BetaPrior, CredibleKind};
use pottab::neyman::{estimate_crd, interval, VarianceKind};
use pottab::{Measure, ObservedTable, RngSeed};

#[test]
fn readme_example() -> pottab::Result<()> {
    let obs = ObservedTable::new(15, 5, 5, 15)?;
    let est = estimate_crd(&obs)?;
    let ci = interval(&est, VarianceKind::Improved, 0.95, false)?;
    assert!(ci.lower > 0.27 && ci.upper < 0.73);

    let post = draw_measure(&obs, &BetaPrior::uniform(), AssociationModel::Independent,
                            Measure::LogCrr, 10_000, RngSeed(1))?;
    let cred = post.credible_interval(0.95, CredibleKind::EqualTailed)?;
    assert!(cred.lower > 0.0 && cred.upper > cred.lower);
    Ok(())
}
