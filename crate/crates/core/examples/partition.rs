//! Speaker-independent train/validation/test partitions.

use cldnn::train::{make_partitions, partition_sizes, DEFAULT_RATIOS};

fn main() -> cldnn::Result<()> {
    for n in [3, 10, 42] {
        println!("{n} speakers -> {:?}", partition_sizes(n, DEFAULT_RATIOS)?);
    }
    let names: Vec<String> = (0..42).map(|i| format!("spk{i:02}")).collect();
    let p = make_partitions(names.iter().map(String::as_str), DEFAULT_RATIOS, 7)?;
    println!("validation: {:?}", p.validation);
    println!("test:       {:?}", p.test);
    let mut csv = Vec::new();
    p.write_csv(&mut csv)?;
    println!("{} csv rows", String::from_utf8_lossy(&csv).lines().count() - 1);
    Ok(())
}
