//! Cross-relation convolution of a pooled tensor, then the fusion MLP.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use relconv::conv::{conv_all, fuse_mlp, FilterBank, Mlp};
use relconv::pooling::PooledNeighborhood;
use relconv::Tensor;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

fn main() -> relconv::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (t, k, d, s, p, h) = (3, 4, 5, 2, 2, 6);
    let pooled = PooledNeighborhood {
        x: random(&mut rng, &[t, k, d]),
        provenance: Vec::new(),
    };
    let bank = FilterBank::new(random(&mut rng, &[p, t, s, d]))?;
    let responses = conv_all(&pooled, &bank)?;
    println!("responses {:?}", responses.shape());
    for f in 0..p {
        println!("  filter {f}: {:.4?}", responses.row(f));
    }

    let width = responses.len();
    let mlp = Mlp {
        w1: random(&mut rng, &[width, h]),
        b1: Tensor::zeros(&[h]),
        w2: random(&mut rng, &[h, h]),
        b2: Tensor::zeros(&[h]),
    };
    let flat = responses.reshape(&[width])?;
    let node = fuse_mlp(&flat, &mlp)?;
    println!("embedding {:.4?}", node.embedding.data());
    Ok(())
}
