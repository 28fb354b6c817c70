// Sample a mixture model, round-trip it through its text form and look at
// one prompt in both embedding layouts.

use mor_icl::data::{embed_e, embed_h, sample_model, sample_prompt, snr, Mixing, MoRModel, SlotMap};

fn run_example() -> mor_icl::Result<()> {
    let model = sample_model(3, 2, 0.5, true, 7)?.with_snr(4.0)?;
    let text = model.to_toml();
    let back = MoRModel::from_toml(&text)?;
    assert_eq!(back, model);
    println!("model (η = {:.2}):\n{text}", snr(&model)?);

    let prompt = sample_prompt(&model, 5, Mixing::PerSample, 11)?;
    print!("prompt:\n{}", prompt.to_csv());

    let e = embed_e(&prompt);
    println!("E is {}×{}; its query column has label 0", e.matrix.nrows(), e.matrix.ncols());
    let height = SlotMap::min_height(3);
    let h = embed_h(&prompt, height)?;
    println!("H is {}×{} (minimum height {height})", h.matrix.nrows(), h.matrix.ncols());
    Ok(())
}

fn main() -> mor_icl::Result<()> {
    run_example()
}
