use jlgcn::linalg::{DenseMatrix, Rng};
use std::time::Instant;

fn t<F: FnMut()>(label: &str, reps: usize, mut f: F) {
    let t0 = Instant::now();
    for _ in 0..reps { f(); }
    println!("{label}: {:.4}s", t0.elapsed().as_secs_f64() / reps as f64);
}

fn main() {
    let n = 2708;
    let mut rng = Rng::new(1);
    let a: DenseMatrix<f32> = DenseMatrix::glorot_init(n, n, &mut rng);
    let z1: DenseMatrix<f32> = DenseMatrix::glorot_init(n, 16, &mut rng);
    let h7: DenseMatrix<f32> = DenseMatrix::glorot_init(n, 7, &mut rng);
    let mut out = DenseMatrix::<f32>::zeros(0, 0);

    t("A(NxN) * H(Nx7)", 5, || { a.matmul_into(&h7, &mut out).unwrap(); });
    t("A(NxN) * Z(Nx16)", 5, || { a.matmul_into(&z1, &mut out).unwrap(); });
    t("gram z1 (Nx16)", 5, || { z1.gram_into(&mut out); });
    t("A^T U (tn, n=7)", 5, || { out = a.matmul_tn(&h7).unwrap(); });
    t("U Hᵀ (nt)", 5, || { out = h7.matmul_nt(&h7).unwrap(); });
    t("add NxN", 5, || { out = a.add(&a).unwrap(); });
    t("clone NxN", 5, || { out = a.clone(); });
    let g: DenseMatrix<f32> = DenseMatrix::glorot_init(n, 16, &mut rng);
    t("kernel_from_projected-ish gram+map", 3, || {
        g.gram_into(&mut out);
        out.map_inplace(|v| v.max(0.0));
    });
}
