//! Scaled dot-product attention and the dense helpers behind it.

use debias_sgg::numeric::{attention, softmax, Matrix};

fn main() -> debias_sgg::Result<()> {
    let q = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]])?;
    let k = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])?;
    let v = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])?;
    let out = attention(&q, &k, &v)?;
    for (i, row) in out.to_rows().iter().enumerate() {
        println!("query {i} -> {row:.4?}");
    }
    println!("softmax([1, 2, 3]) = {:.4?}", softmax(&[1.0, 2.0, 3.0])?);
    Ok(())
}
