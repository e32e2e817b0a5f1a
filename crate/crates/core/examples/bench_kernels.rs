use std::time::Instant;
use stillwater::autodiff::kernels;

fn main() {
    let n_pts = 40960usize;
    for w in [48usize, 64, 96, 128] {
        let a = vec![0.5f64; n_pts * w];
        let b = vec![0.25f64; w * w];
        let mut out = vec![0.0f64; n_pts * w];
        let t0 = Instant::now();
        kernels::matmul(&mut out, &a, &b, n_pts, w, w);
        let dt = t0.elapsed().as_secs_f64();
        let gf = (2.0 * n_pts as f64 * w as f64 * w as f64) / dt / 1e9;
        println!("matmul {n_pts}x{w}x{w}: {:.3}s  {:.2} GFLOP/s", dt, gf);
    }
    // trig throughput
    let n = 10_000_000usize;
    let xs: Vec<f64> = (0..n).map(|i| (i as f64) * 0.001).collect();
    let t0 = Instant::now();
    let mut acc = 0.0;
    for &x in &xs { let (s, c) = x.sin_cos(); acc += s + c; }
    let dt = t0.elapsed().as_secs_f64();
    println!("sin_cos: {:.1} M/s (acc={acc:.3})", n as f64 / dt / 1e6);
    let t0 = Instant::now();
    let mut acc2 = 0.0;
    for &x in &xs { acc2 += x.sin(); }
    let dt2 = t0.elapsed().as_secs_f64();
    println!("sin: {:.1} M/s (acc={acc2:.3})", n as f64 / dt2 / 1e6);
}
