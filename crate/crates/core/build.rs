fn main() {
    // LAPACK and BLAS symbols for nalgebra-lapack come from the system OpenBLAS.
    println!("cargo:rustc-link-lib=openblas");
}
