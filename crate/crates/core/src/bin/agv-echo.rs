//! Reference AGV1 adapter over stdio.
//!
//! Segment requests are answered with channel 0 of the request (or a stored
//! map); tile requests with class = first pixel byte, confidence = second.

use std::io::{self, BufReader, BufWriter};
use std::path::PathBuf;
use std::time::Duration;

use agavescan::segmenter::protocol::{read_frame, write_frame, Frame, ImageFrame, ProtocolError};
use clap::Parser;

#[derive(Parser)]
#[command(name = "agv-echo", about = "Echo adapter for the AGV1 inference protocol")]
struct Args {
    /// Answer every segment request with this grayscale PNG.
    #[arg(long)]
    fixed: Option<PathBuf>,
    /// Reply with an error frame carrying this message.
    #[arg(long)]
    fail: Option<String>,
    /// Write replies with a corrupted magic.
    #[arg(long)]
    corrupt_magic: bool,
    /// Delay before each reply.
    #[arg(long, default_value_t = 0)]
    delay_ms: u64,
}

fn reply(args: &Args, fixed: Option<&ImageFrame>, req: Frame) -> Frame {
    if let Some(msg) = &args.fail {
        return Frame::Error(msg.clone());
    }
    match req {
        Frame::SegmentRequest(img) => match fixed {
            Some(map) if map.width == img.width && map.height == img.height => Frame::SegmentResponse(map.clone()),
            Some(map) => Frame::Error(format!(
                "stored map is {}×{}, request is {}×{}",
                map.width, map.height, img.width, img.height
            )),
            None => {
                let data = img.data.chunks_exact(3).map(|px| px[0]).collect();
                Frame::SegmentResponse(ImageFrame::new(img.width, img.height, 1, data))
            }
        },
        Frame::TileRequest(img) => Frame::TileResponse {
            class: img.data[0],
            confidence: img.data.get(1).copied().unwrap_or(0),
        },
        other => Frame::Error(format!("unexpected message type {}", other.msg_type())),
    }
}

fn main() -> anyhow::Result<()> {
    let args = Args::parse();
    let fixed = match &args.fixed {
        Some(p) => {
            let (w, h, data) = agavescan::geo::io::read_gray_png(p)?;
            Some(ImageFrame::new(w, h, 1, data))
        }
        None => None,
    };
    let mut input = BufReader::new(io::stdin().lock());
    let mut output = BufWriter::new(io::stdout().lock());
    loop {
        let req = match read_frame(&mut input) {
            Ok(f) => f,
            Err(ProtocolError::Closed) => return Ok(()),
            Err(e) => {
                // The stream cannot be resynchronized after a bad header.
                write_frame(&mut output, &Frame::Error(e.to_string()))?;
                std::process::exit(1);
            }
        };
        if args.delay_ms > 0 {
            std::thread::sleep(Duration::from_millis(args.delay_ms));
        }
        let mut bytes = reply(&args, fixed.as_ref(), req).encode();
        if args.corrupt_magic {
            bytes[3] = b'0';
        }
        io::Write::write_all(&mut output, &bytes)?;
        io::Write::flush(&mut output)?;
    }
}
