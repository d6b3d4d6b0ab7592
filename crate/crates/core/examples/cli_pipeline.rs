//! Drives the command-line interface in-process on a small task and prints
//! the resulting evaluation and refinement tables.

use nat_engine::cli;

fn main() -> nat_engine::Result<()> {
    let dir = std::env::temp_dir().join("nat-engine-cli-example");
    let run = dir.display().to_string();
    let data = dir.join("data").display().to_string();
    let common = ["--run-dir", &run, "--data-dir", &data];
    let steps: [&[&str]; 8] = [
        &["gen-data", "--n-train", "400", "--n-dev", "60", "--n-test", "60"],
        &["train-teacher", "--epochs", "6"],
        &["distill"],
        &["train-nat", "--targets", "reference", "--epochs", "3"],
        &["train-nat", "--targets", "distill", "--epochs", "3"],
        &["train-engine", "--epochs", "2"],
        &["evaluate", "--regimes", "teacher,baseline,distill,engine"],
        &["refine-eval", "--iterations", "1,10"],
    ];
    for step in steps {
        let args: Vec<String> = step.iter().chain(common.iter()).map(|s| s.to_string()).collect();
        let m = cli::run(&args)?;
        println!("{:<14} {} artifacts", m.command, m.outputs.len());
    }
    for table in ["evaluate.tsv", "refine.tsv"] {
        println!("\n{}", std::fs::read_to_string(dir.join(table)).expect("written above"));
    }
    Ok(())
}
