//! Analytic attention cost for axial and full attention, and a short timing
//! comparison.
use canet::harness::bench::{bench_attention, to_tsv, BenchConfig};
use canet::net::{attention_flops, AttentionMode};

fn main() -> canet::Result<()> {
    for edge in [4, 8, 16, 32] {
        let a = attention_flops([edge; 3], 32, AttentionMode::Axial);
        let f = attention_flops([edge; 3], 32, AttentionMode::Full);
        println!("edge {edge:>2}: axial {:>14} flops, full {:>16} flops ({:.1}x)", a.total(), f.total(), f.total() as f64 / a.total() as f64);
    }
    let rows = bench_attention(&BenchConfig { edges: vec![4, 8, 12], channels: 8, ..BenchConfig::default() })?;
    print!("{}", to_tsv(&rows));
    Ok(())
}
