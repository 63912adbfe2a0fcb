//! Schemas, CSV input/output, model-space encoding and synthetic datasets.

mod csv_io;
mod encode;
mod schema;
mod toy;

pub use csv_io::{load_csv, load_csv_with_schema, read_csv, write_csv, write_csv_to};
pub use encode::{decode, decode_batch, encode, EncodedBatch};
pub(crate) use schema::hex;
pub use schema::{
    Cell, ColumnKind, ColumnSchema, ColumnSpec, KindName, SchemaSpec, SynthTable, Table,
    TableSchema, Task,
};
pub use toy::{
    generate_latent_categorical, generate_toy, toy_color_name, LATENT_SIZES, TOY_CENTERS,
    TOY_JITTER, TOY_MIN_ROWS, TOY_RADIUS,
};
