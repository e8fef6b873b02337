//! AGV1 framing for external inference adapters.
//!
//! Every frame starts with the 4 magic bytes `AGV1` and a message type:
//!
//! | type | body |
//! |------|------|
//! | 1 segment request | u32le width, u32le height, u8 channels (3), pixels |
//! | 2 segment response | u32le width, u32le height, u8 channels (1), pixels |
//! | 3 tile request | as type 1 |
//! | 4 tile response | u8 class (0 young, 1 mature), u8 confidence |
//! | 255 error | u32le length, UTF-8 message |

use std::io::{self, Read, Write};

pub const MAGIC: [u8; 4] = *b"AGV1";

pub const MSG_SEGMENT_REQUEST: u8 = 1;
pub const MSG_SEGMENT_RESPONSE: u8 = 2;
pub const MSG_TILE_REQUEST: u8 = 3;
pub const MSG_TILE_RESPONSE: u8 = 4;
pub const MSG_ERROR: u8 = 255;

/// Largest accepted image side; guards allocations on corrupt headers.
pub const MAX_SIDE: u32 = 16_384;
const MAX_ERROR_LEN: u32 = 1 << 20;

#[derive(Debug, thiserror::Error)]
pub enum ProtocolError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unknown message type {0}")]
    UnknownType(u8),
    #[error("frame too large: {0}")]
    TooLarge(String),
    #[error("bad channel count {0}")]
    BadChannels(u8),
    #[error("error message is not UTF-8")]
    Utf8,
    #[error("stream closed")]
    Closed,
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageFrame {
    pub width: u32,
    pub height: u32,
    pub channels: u8,
    pub data: Vec<u8>,
}

impl ImageFrame {
    pub fn new(width: u32, height: u32, channels: u8, data: Vec<u8>) -> Self {
        debug_assert_eq!(data.len(), width as usize * height as usize * channels as usize);
        Self {
            width,
            height,
            channels,
            data,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Frame {
    SegmentRequest(ImageFrame),
    SegmentResponse(ImageFrame),
    TileRequest(ImageFrame),
    TileResponse { class: u8, confidence: u8 },
    Error(String),
}

impl Frame {
    pub fn msg_type(&self) -> u8 {
        match self {
            Frame::SegmentRequest(_) => MSG_SEGMENT_REQUEST,
            Frame::SegmentResponse(_) => MSG_SEGMENT_RESPONSE,
            Frame::TileRequest(_) => MSG_TILE_REQUEST,
            Frame::TileResponse { .. } => MSG_TILE_RESPONSE,
            Frame::Error(_) => MSG_ERROR,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16);
        out.extend_from_slice(&MAGIC);
        out.push(self.msg_type());
        match self {
            Frame::SegmentRequest(img) | Frame::SegmentResponse(img) | Frame::TileRequest(img) => {
                out.reserve(img.data.len() + 9);
                out.extend_from_slice(&img.width.to_le_bytes());
                out.extend_from_slice(&img.height.to_le_bytes());
                out.push(img.channels);
                out.extend_from_slice(&img.data);
            }
            Frame::TileResponse { class, confidence } => {
                out.push(*class);
                out.push(*confidence);
            }
            Frame::Error(msg) => {
                out.extend_from_slice(&(msg.len() as u32).to_le_bytes());
                out.extend_from_slice(msg.as_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Frame, ProtocolError> {
        let mut r = bytes;
        let f = read_frame(&mut r)?;
        if !r.is_empty() {
            return Err(ProtocolError::TooLarge(format!("{} trailing bytes", r.len())));
        }
        Ok(f)
    }
}

pub fn write_frame(w: &mut impl Write, frame: &Frame) -> io::Result<()> {
    w.write_all(&frame.encode())?;
    w.flush()
}

fn read_u32(r: &mut impl Read) -> Result<u32, ProtocolError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u8(r: &mut impl Read) -> Result<u8, ProtocolError> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

fn read_image(r: &mut impl Read, expect_channels: u8) -> Result<ImageFrame, ProtocolError> {
    let width = read_u32(r)?;
    let height = read_u32(r)?;
    let channels = read_u8(r)?;
    if width == 0 || height == 0 || width > MAX_SIDE || height > MAX_SIDE {
        return Err(ProtocolError::TooLarge(format!("{width}×{height}")));
    }
    if channels != expect_channels {
        return Err(ProtocolError::BadChannels(channels));
    }
    let mut data = vec![0u8; width as usize * height as usize * channels as usize];
    r.read_exact(&mut data)?;
    Ok(ImageFrame {
        width,
        height,
        channels,
        data,
    })
}

/// Read one frame. A clean EOF before the first byte is [`ProtocolError::Closed`].
pub fn read_frame(r: &mut impl Read) -> Result<Frame, ProtocolError> {
    let mut magic = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut magic[got..]) {
            Ok(0) if got == 0 => return Err(ProtocolError::Closed),
            Ok(0) => return Err(io::Error::from(io::ErrorKind::UnexpectedEof).into()),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    if magic != MAGIC {
        return Err(ProtocolError::BadMagic(magic));
    }
    match read_u8(r)? {
        MSG_SEGMENT_REQUEST => Ok(Frame::SegmentRequest(read_image(r, 3)?)),
        MSG_SEGMENT_RESPONSE => Ok(Frame::SegmentResponse(read_image(r, 1)?)),
        MSG_TILE_REQUEST => Ok(Frame::TileRequest(read_image(r, 3)?)),
        MSG_TILE_RESPONSE => Ok(Frame::TileResponse {
            class: read_u8(r)?,
            confidence: read_u8(r)?,
        }),
        MSG_ERROR => {
            let len = read_u32(r)?;
            if len > MAX_ERROR_LEN {
                return Err(ProtocolError::TooLarge(format!("error message of {len} bytes")));
            }
            let mut buf = vec![0u8; len as usize];
            r.read_exact(&mut buf)?;
            String::from_utf8(buf)
                .map(Frame::Error)
                .map_err(|_| ProtocolError::Utf8)
        }
        t => Err(ProtocolError::UnknownType(t)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_layout_is_exact() {
        let f = Frame::SegmentRequest(ImageFrame::new(2, 1, 3, vec![1, 2, 3, 4, 5, 6]));
        let b = f.encode();
        assert_eq!(&b[..5], b"AGV1\x01");
        assert_eq!(&b[5..9], &[2, 0, 0, 0]);
        assert_eq!(&b[9..13], &[1, 0, 0, 0]);
        assert_eq!(b[13], 3);
        assert_eq!(&b[14..], &[1, 2, 3, 4, 5, 6]);
        assert_eq!(Frame::decode(&b).unwrap(), f);
    }

    #[test]
    fn all_kinds_round_trip() {
        let frames = [
            Frame::SegmentResponse(ImageFrame::new(3, 2, 1, vec![9; 6])),
            Frame::TileRequest(ImageFrame::new(1, 1, 3, vec![7, 8, 9])),
            Frame::TileResponse {
                class: 1,
                confidence: 200,
            },
            Frame::Error("model exploded ✗".into()),
        ];
        for f in frames {
            assert_eq!(Frame::decode(&f.encode()).unwrap(), f);
        }
        assert_eq!(Frame::Error("x".into()).encode(), b"AGV1\xff\x01\x00\x00\x00x");
    }

    #[test]
    fn malformed_frames_are_rejected() {
        assert!(matches!(Frame::decode(b"AGV0\x02"), Err(ProtocolError::BadMagic(_))));
        assert!(matches!(Frame::decode(b"AGV1\x07"), Err(ProtocolError::UnknownType(7))));
        assert!(matches!(Frame::decode(b""), Err(ProtocolError::Closed)));
        let mut short = Frame::SegmentResponse(ImageFrame::new(2, 2, 1, vec![0; 4])).encode();
        short.pop();
        assert!(matches!(Frame::decode(&short), Err(ProtocolError::Io(_))));
        let wrong_ch = Frame::SegmentRequest(ImageFrame::new(1, 1, 3, vec![0; 3])).encode();
        let mut bad = wrong_ch.clone();
        bad[4] = MSG_SEGMENT_RESPONSE;
        assert!(matches!(Frame::decode(&bad), Err(ProtocolError::BadChannels(3))));
        let huge = b"AGV1\x01\xff\xff\xff\xff\x01\x00\x00\x00\x03";
        assert!(matches!(Frame::decode(huge), Err(ProtocolError::TooLarge(_))));
    }
}
