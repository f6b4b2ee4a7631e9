//! Draws banana samples, lifts them to 16 dimensions, writes both file formats
//! and reads them back as a file-backed source.
//!
//! Usage: `cargo run --release --example sources_io`

use rd_sandwich::sources::{read_any, write_binary, write_csv, BatchStream, Source};
use rd_sandwich::stats::Summary;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("rd_sandwich_sources_io");
    std::fs::create_dir_all(&dir)?;

    let lifted = Source::glorot_lift(Source::default_banana(0), 16, 7)?;
    let batch = lifted.sample_at(0, 5000)?;
    let csv = dir.join("banana16.csv");
    let bin = dir.join("banana16.rds");
    write_csv(&csv, 16, batch.data.data())?;
    write_binary(&bin, 16, batch.data.data())?;
    let (dim, rows) = read_any(&bin, false)?;
    println!("wrote {} and {}", csv.display(), bin.display());
    println!("binary read back: dim {dim}, {} rows, identical: {}", rows.len() / dim, rows == batch.data.data());

    let file = Source::from_file(&csv, 16, false)?;
    let mut stream = BatchStream::new(&file, 1);
    let x = stream.next_batch(20_000)?;
    let first: Vec<f64> = (0..x.rows()).map(|i| x.get(i, 0)).collect();
    let s = Summary::of(&first);
    println!("resampled 20000 rows from the file; coordinate 0 mean {:.4} +- {:.4}", s.mean, s.std_error());
    Ok(())
}
