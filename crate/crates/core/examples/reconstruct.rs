use nonlocal_inverse::config::Scenario;
use nonlocal_inverse::pipeline::Setup;

fn main() -> nonlocal_inverse::Result<()> {
    let setup = Setup::new(&Scenario::standard())?;
    let experiment = setup.experiment()?;
    let data = experiment.synthesize(&setup.coefficient)?;
    let result = experiment.reconstruct(&data, &setup.inversion_options())?;
    println!("{:e}", result.max_relative_error(setup.coefficient.values()));
    Ok(())
}
