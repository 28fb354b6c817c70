// Drive an experiment from a TOML config and write its CSV and manifest.

use mor_icl::experiments::{run, ExperimentConfig};

fn run_example() -> mor_icl::Result<()> {
    let text = r#"
        experiment = "exp-construct-check"
        seeds = 3
        etas = [2.0, 10.0]
    "#;
    let cfg = ExperimentConfig::from_toml(text, None)?;
    let out = run(&cfg, 2)?;
    let dir = std::env::temp_dir().join(format!("moricl-example-{}", std::process::id()));
    for path in out.write(&dir)? {
        println!("wrote {}", path.display());
    }
    for line in out.csv().lines().take(8) {
        println!("{line}");
    }
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}

fn main() -> mor_icl::Result<()> {
    run_example()
}
