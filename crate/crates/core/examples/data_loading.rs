//! Load MNIST from `$APDATA/mnist` (default `./data/mnist`), build the binary
//! and split-class tasks, and draw a balanced few-shot subsample.
//!
//! `python3 scripts/fetch_mnist.py && cargo run --release --example data_loading`

use archprune::data::{balanced_subsample, binary_task, class_subset};
use archprune::harness::{data_root, load_mnist_splits};
use archprune::Result;

fn main() -> Result<()> {
    let root = data_root();
    let (train, test) = match load_mnist_splits(&root, 0.2, 0) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(2);
        }
    };
    println!("train {} x {}, test {}", train.len(), train.n_features(), test.len());
    println!("class counts {:?}", train.class_counts());

    let zero_one = binary_task(&train, 0, 1)?;
    println!("0-vs-1: {} examples, counts {:?}", zero_one.len(), zero_one.class_counts());

    let old = class_subset(&train, &[0, 1, 2, 3, 4])?;
    let new = class_subset(&train, &[5, 6, 7, 8, 9])?;
    println!("digits 0-4: {}, digits 5-9: {} (relabelled {:?})", old.len(), new.len(), new.class_counts());

    let few = balanced_subsample(&new, &[0, 1, 2, 3, 4], 10, 0)?;
    println!("50-example balanced subsample, counts {:?}", few.class_counts());
    Ok(())
}
