//! Wire protocol between the amplifier side and the session engine, plus
//! record and model persistence.

mod codec;
mod store;
mod stream;

pub use codec::{
    decode_frame, encode_frame, FrameDecoder, StreamHeader, WireFrame, FRAME_HEADER_LEN, MAGIC, MAX_PAYLOAD,
    VERSION_MAJOR, VERSION_MINOR,
};
pub use store::{
    load_model, load_record, save_model, save_record, IcaSection, LdaSection, ModelFile, FILE_CHUNK,
    MODEL_FORMAT_VERSION,
};
pub use stream::{reassemble, stream_record, write_record, write_record_paced, RecordAssembler, RecordReader};
