//! Tensor containers: `.npy` for 4D global tensors and CSV for small tiles.
//!
//! `.npy` files are written as little-endian f32 (`<f4`) in C order with the
//! full 4D shape `{batch, depth, rows, cols}`. bf16 tensors are written as the
//! f32 values they hold. Reading accepts `<f4` or `<f8` arrays of rank 1 to 4;
//! lower ranks are padded with leading unit dimensions.

use std::io::{Read, Write};
use std::path::Path;

use npyz::WriterBuilder;

use super::{Dtype, GlobalTensor, Major, Tile, TileError};

fn io_err(e: impl std::fmt::Display) -> TileError {
    TileError::Io(e.to_string())
}

pub fn write_npy<W: Write>(tensor: &GlobalTensor, writer: W) -> Result<(), TileError> {
    let shape: Vec<u64> = tensor.dims().iter().map(|&d| d as u64).collect();
    let mut out = npyz::WriteOptions::<f32>::new()
        .default_dtype()
        .shape(&shape)
        .writer(writer)
        .begin_nd()
        .map_err(io_err)?;
    out.extend(tensor.data().iter().copied()).map_err(io_err)?;
    out.finish().map_err(io_err)
}

pub fn read_npy<R: Read>(reader: R, dtype: Dtype) -> Result<GlobalTensor, TileError> {
    let npy = npyz::NpyFile::new(reader).map_err(io_err)?;
    if npy.order() != npyz::Order::C {
        return Err(TileError::Io("only C-ordered arrays are supported".into()));
    }
    let shape = npy.shape().to_vec();
    if shape.is_empty() || shape.len() > 4 {
        return Err(TileError::Io(format!("expected rank 1..=4, got shape {shape:?}")));
    }
    let mut dims = [1usize; 4];
    for (slot, &d) in dims[4 - shape.len()..].iter_mut().zip(&shape) {
        *slot = d as usize;
    }
    let data: Vec<f32> = match npy.dtype() {
        npyz::DType::Plain(ts) if ts.to_string() == "<f8" => npy.into_vec::<f64>().map_err(io_err)?.into_iter().map(|x| x as f32).collect(),
        _ => npy.into_vec::<f32>().map_err(io_err)?,
    };
    GlobalTensor::from_vec(dims, dtype, data)
}

pub fn save_npy(tensor: &GlobalTensor, path: impl AsRef<Path>) -> Result<(), TileError> {
    let file = std::fs::File::create(path).map_err(io_err)?;
    write_npy(tensor, std::io::BufWriter::new(file))
}

pub fn load_npy(path: impl AsRef<Path>, dtype: Dtype) -> Result<GlobalTensor, TileError> {
    let file = std::fs::File::open(path).map_err(io_err)?;
    read_npy(std::io::BufReader::new(file), dtype)
}

/// One CSV record per tile row, no header.
pub fn write_tile_csv<W: Write>(tile: &Tile, writer: W) -> Result<(), TileError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    for r in 0..tile.rows() {
        w.write_record((0..tile.cols()).map(|c| tile.get(r, c).to_string()))
            .map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn read_tile_csv<R: Read>(reader: R, dtype: Dtype, major: Major) -> Result<Tile, TileError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut data = Vec::new();
    let mut rows = 0;
    let mut cols = None;
    for record in rdr.records() {
        let record = record.map_err(io_err)?;
        if *cols.get_or_insert(record.len()) != record.len() {
            return Err(TileError::Io(format!("ragged CSV row {rows}")));
        }
        for field in record.iter() {
            data.push(field.parse::<f32>().map_err(|e| TileError::Io(format!("row {rows}: {e}")))?);
        }
        rows += 1;
    }
    Tile::from_vec(rows, cols.unwrap_or(0), dtype, major, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn npy_round_trip_is_bitwise() {
        let dims = [2, 3, 16, 32];
        let data: Vec<f32> = (0..dims.iter().product::<usize>()).map(|i| (i as f32).sin() * 1e-3).collect();
        let t = GlobalTensor::from_vec(dims, Dtype::F32, data).unwrap();
        let mut buf = Vec::new();
        write_npy(&t, &mut buf).unwrap();
        assert_eq!(&buf[..6], b"\x93NUMPY");
        let back = read_npy(buf.as_slice(), Dtype::F32).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn npy_rank2_is_padded() {
        let mut buf = Vec::new();
        let mut w = npyz::WriteOptions::<f64>::new()
            .default_dtype()
            .shape(&[16, 16])
            .writer(&mut buf)
            .begin_nd()
            .unwrap();
        w.extend((0..256).map(|i| i as f64)).unwrap();
        w.finish().unwrap();
        let t = read_npy(buf.as_slice(), Dtype::F32).unwrap();
        assert_eq!(t.dims(), [1, 1, 16, 16]);
        assert_eq!(t.get(0, 0, 3, 4), 52.0);
    }

    #[test]
    fn csv_round_trip() {
        let tile = Tile::from_fn(16, 32, Dtype::F32, Major::RowMajor, |r, c| r as f32 * 0.5 - c as f32 / 3.0).unwrap();
        let mut buf = Vec::new();
        write_tile_csv(&tile, &mut buf).unwrap();
        let back = read_tile_csv(buf.as_slice(), Dtype::F32, Major::RowMajor).unwrap();
        assert_eq!(back, tile);
        assert!(read_tile_csv("1,2\n3\n".as_bytes(), Dtype::F32, Major::RowMajor).is_err());
    }
}
