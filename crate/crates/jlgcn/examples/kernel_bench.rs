use jlgcn::linalg::{DenseMatrix, Rng};
use std::time::Instant;

fn main() {
    let n = 2708;
    let mut rng = Rng::new(1);
    let a = DenseMatrix::<f64>::glorot_init(n, n, &mut rng);
    let h = DenseMatrix::<f64>::glorot_init(n, 16, &mut rng);
    let f = DenseMatrix::<f64>::glorot_init(n, 1433, &mut rng);
    let w = DenseMatrix::<f64>::glorot_init(1433, 16, &mut rng);
    let g = DenseMatrix::<f64>::glorot_init(n, 16, &mut rng);

    // A(N,N) * H(N,16)
    let t = Instant::now();
    let mut out = DenseMatrix::zeros(0, 0);
    for _ in 0..3 { a.matmul_into(&h, &mut out).unwrap(); }
    let dt = t.elapsed().as_secs_f64() / 3.0;
    println!("A*H (NxN x Nx16):  {:.3}s  {:.2} GF/s", dt, 2.0*n as f64*n as f64*16.0/dt/1e9);

    // F(N,1433) * W(1433,16)
    let t = Instant::now();
    for _ in 0..3 { f.matmul_into(&w, &mut out).unwrap(); }
    let dt = t.elapsed().as_secs_f64() / 3.0;
    println!("F*W (Nx1433 x 1433x16): {:.3}s  {:.2} GF/s", dt, 2.0*n as f64*1433.0*16.0/dt/1e9);

    // Gram of G (N x 16)
    let t = Instant::now();
    for _ in 0..3 { g.gram_into(&mut out); }
    let dt = t.elapsed().as_secs_f64() / 3.0;
    println!("gram G (Nx16):     {:.3}s  {:.2} GF/s", dt, n as f64*n as f64*16.0/dt/1e9);

    // A^T * U
    let u = DenseMatrix::<f64>::glorot_init(n, 16, &mut rng);
    let t = Instant::now();
    for _ in 0..3 { let _ = a.matmul_tn(&u).unwrap(); }
    let dt = t.elapsed().as_secs_f64() / 3.0;
    println!("A^T*U:             {:.3}s  {:.2} GF/s", dt, 2.0*n as f64*n as f64*16.0/dt/1e9);

    // exp map N^2
    let t = Instant::now();
    let mut m2 = a.clone();
    for _ in 0..3 { m2.map_inplace(|v| (-v*v).exp()); }
    let dt = t.elapsed().as_secs_f64() / 3.0;
    println!("exp N^2:           {:.3}s  {:.1} M exp/s", dt, n as f64*n as f64/dt/1e6);

    // big matmul F^T * dG  (1433 x N x 16)
    let dg = DenseMatrix::<f64>::glorot_init(n, 16, &mut rng);
    let t = Instant::now();
    for _ in 0..3 { let _ = f.matmul_tn(&dg).unwrap(); }
    let dt = t.elapsed().as_secs_f64() / 3.0;
    println!("F^T*dG:            {:.3}s  {:.2} GF/s", dt, 2.0*n as f64*1433.0*16.0/dt/1e9);
}
