//! Writes and reads the binary tensor format, including the header bytes.

use poissonprop::io::{decode_tensor, encode_tensor, load_tensor, save_tensor_as, Dtype};
use poissonprop::Tensor;

fn main() -> poissonprop::Result<()> {
    let t = Tensor::new(vec![2, 3], vec![0.0, 1.5, -2.0, 3.25, 4.0, 1e-3])?;
    let bytes = encode_tensor(&t, Dtype::F64)?;
    println!("header {:02x?}", &bytes[..18]);
    println!("{} bytes total", bytes.len());
    assert_eq!(decode_tensor(&bytes, "<memory>".as_ref())?, t);

    let dir = std::env::temp_dir().join("poissonprop-tensor-files");
    std::fs::create_dir_all(&dir).map_err(|source| poissonprop::Error::Io {
        path: dir.clone(),
        source,
    })?;
    for dtype in [Dtype::F64, Dtype::F32] {
        let path = dir.join(format!("t{}.t", dtype.code()));
        save_tensor_as(&path, &t, dtype)?;
        println!("{dtype:?}: {:?}", load_tensor(&path)?.data());
    }
    let mask = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0])?;
    let path = dir.join("mask.t");
    save_tensor_as(&path, &mask, Dtype::U8)?;
    println!("U8 mask: {:?}", load_tensor(&path)?.data());

    let mut broken = bytes.clone();
    broken.truncate(bytes.len() - 3);
    match decode_tensor(&broken, "broken.t".as_ref()) {
        Err(e) => println!("truncated file: {} ({e})", e.class()),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
