//! GeoJSON label layers, GeoTIFF scenes and PNG clips/masks.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde_json::{json, Map, Value};
use tiff::decoder::{Decoder, DecodingResult};
use tiff::encoder::{colortype, TiffEncoder};
use tiff::tags::Tag;
use tiff::ColorType;

use super::{
    BitMask, GeoError, GeoTransform, Maturity, ParcelLabel, PixelBuffer, Point, Polygon, Provenance, Raster, Ring,
};

const TAG_MODEL_PIXEL_SCALE: u16 = 33550;
const TAG_MODEL_TIEPOINT: u16 = 33922;
const TAG_GEO_KEY_DIRECTORY: u16 = 34735;
const TAG_GDAL_NODATA: u16 = 42113;
const KEY_GEOGRAPHIC_TYPE: u16 = 2048;
const KEY_PROJECTED_CS_TYPE: u16 = 3072;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> GeoError + '_ {
    move |source| GeoError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn decode_err(path: &Path, message: impl ToString) -> GeoError {
    GeoError::Decode {
        path: path.display().to_string(),
        message: message.to_string(),
    }
}

// ---------------------------------------------------------------------------
// GeoJSON

/// A set of parcel labels sharing one CRS.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabelLayer {
    pub crs: String,
    pub labels: Vec<ParcelLabel>,
}

impl LabelLayer {
    pub fn polygons(&self) -> Vec<Polygon> {
        self.labels.iter().map(|l| l.polygon.clone()).collect()
    }
}

pub fn ring_to_json(ring: &Ring) -> Value {
    Value::Array(ring.iter().map(|p| json!([p.x, p.y])).collect())
}

pub fn polygon_to_geojson(p: &Polygon) -> Value {
    let rings: Vec<Value> = p.rings().map(ring_to_json).collect();
    json!({ "type": "Polygon", "coordinates": rings })
}

fn ring_from_json(v: &Value) -> Result<Ring, GeoError> {
    let arr = v
        .as_array()
        .ok_or_else(|| GeoError::InvalidPolygon("ring is not an array".into()))?;
    arr.iter()
        .map(|pt| {
            let xy = pt
                .as_array()
                .filter(|a| a.len() >= 2)
                .ok_or_else(|| GeoError::InvalidPolygon("position must be [x, y]".into()))?;
            match (xy[0].as_f64(), xy[1].as_f64()) {
                (Some(x), Some(y)) => Ok(Point::new(x, y)),
                _ => Err(GeoError::InvalidPolygon("non-numeric coordinate".into())),
            }
        })
        .collect()
}

fn polygon_from_coords(coords: &Value) -> Result<Polygon, GeoError> {
    let rings = coords
        .as_array()
        .filter(|r| !r.is_empty())
        .ok_or_else(|| GeoError::InvalidPolygon("polygon needs at least one ring".into()))?;
    let exterior = ring_from_json(&rings[0])?;
    let holes = rings[1..].iter().map(ring_from_json).collect::<Result<_, _>>()?;
    Polygon::new(exterior, holes)
}

/// Parse a GeoJSON `Polygon` geometry (or a Feature wrapping one).
pub fn polygon_from_geojson(v: &Value) -> Result<Polygon, GeoError> {
    let geom = if v.get("type").and_then(Value::as_str) == Some("Feature") {
        v.get("geometry").unwrap_or(&Value::Null)
    } else {
        v
    };
    match geom.get("type").and_then(Value::as_str) {
        Some("Polygon") => polygon_from_coords(geom.get("coordinates").unwrap_or(&Value::Null)),
        other => Err(GeoError::InvalidPolygon(format!(
            "expected a Polygon geometry, got {other:?}"
        ))),
    }
}

fn parse_maturity(v: Option<&Value>) -> Result<Maturity, GeoError> {
    match v.and_then(Value::as_str) {
        None => Ok(Maturity::Unknown),
        Some("young") => Ok(Maturity::Young),
        Some("mature") => Ok(Maturity::Mature),
        Some("unknown") => Ok(Maturity::Unknown),
        Some(s) => Err(GeoError::InvalidInput(format!("unknown maturity {s:?}"))),
    }
}

fn parse_provenance(v: Option<&Value>) -> Result<Provenance, GeoError> {
    match v.and_then(Value::as_str) {
        None | Some("expert") => Ok(Provenance::Expert),
        Some("model_proposed") => Ok(Provenance::ModelProposed),
        Some("model_approved") => Ok(Provenance::ModelApproved),
        Some("synthetic") => Ok(Provenance::Synthetic),
        Some(s) => Err(GeoError::InvalidInput(format!("unknown provenance {s:?}"))),
    }
}

fn crs_name(fc: &Value) -> String {
    fc.pointer("/crs/properties/name")
        .and_then(Value::as_str)
        .map(normalize_crs_name)
        .unwrap_or_default()
}

/// `urn:ogc:def:crs:EPSG::32613` → `EPSG:32613`.
fn normalize_crs_name(s: &str) -> String {
    if let Some(code) = s.strip_prefix("urn:ogc:def:crs:EPSG::") {
        format!("EPSG:{code}")
    } else {
        s.to_string()
    }
}

impl serde::Serialize for Polygon {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        polygon_to_geojson(self).serialize(s)
    }
}

impl<'de> serde::Deserialize<'de> for Polygon {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = Value::deserialize(d)?;
        polygon_from_geojson(&v).map_err(serde::de::Error::custom)
    }
}

/// Parse a FeatureCollection of parcel labels. Missing properties default to
/// maturity `unknown`, provenance `expert`, phase 1 and a positional id;
/// MultiPolygon features are split into one label per part.
pub fn labels_from_geojson(fc: &Value) -> Result<LabelLayer, GeoError> {
    let features = fc
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| GeoError::InvalidInput("not a FeatureCollection".into()))?;
    let mut labels = Vec::with_capacity(features.len());
    for (i, f) in features.iter().enumerate() {
        let props = f.get("properties").cloned().unwrap_or(Value::Null);
        let id = match props.get("id") {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Number(n)) => n.to_string(),
            _ => format!("f{i}"),
        };
        let maturity = parse_maturity(props.get("maturity"))?;
        let provenance = parse_provenance(props.get("provenance"))?;
        let phase = props.get("phase").and_then(Value::as_u64).unwrap_or(1) as u8;
        let geom = f.get("geometry").unwrap_or(&Value::Null);
        let polygons = match geom.get("type").and_then(Value::as_str) {
            Some("Polygon") => vec![polygon_from_coords(&geom["coordinates"])?],
            Some("MultiPolygon") => geom["coordinates"]
                .as_array()
                .ok_or_else(|| GeoError::InvalidPolygon("bad MultiPolygon".into()))?
                .iter()
                .map(polygon_from_coords)
                .collect::<Result<_, _>>()?,
            other => {
                return Err(GeoError::InvalidPolygon(format!(
                    "feature {id}: unsupported geometry {other:?}"
                )))
            }
        };
        let multi = polygons.len() > 1;
        for (k, polygon) in polygons.into_iter().enumerate() {
            let pid = if multi { format!("{id}#{k}") } else { id.clone() };
            labels.push(ParcelLabel::new(pid, polygon, maturity, provenance, phase)?);
        }
    }
    Ok(LabelLayer {
        crs: crs_name(fc),
        labels,
    })
}

/// Serialize labels; `extra` may add properties per feature.
pub fn labels_to_geojson_with(
    layer: &LabelLayer,
    mut extra: impl FnMut(&ParcelLabel, &mut Map<String, Value>),
) -> Value {
    let features: Vec<Value> = layer
        .labels
        .iter()
        .map(|l| {
            let mut props = Map::new();
            props.insert("id".into(), json!(l.id));
            props.insert("maturity".into(), json!(l.maturity.as_str()));
            props.insert("provenance".into(), json!(l.provenance.as_str()));
            props.insert("phase".into(), json!(l.phase));
            extra(l, &mut props);
            json!({
                "type": "Feature",
                "properties": Value::Object(props),
                "geometry": polygon_to_geojson(&l.polygon),
            })
        })
        .collect();
    let mut fc = json!({ "type": "FeatureCollection", "features": features });
    if !layer.crs.is_empty() {
        fc["crs"] = json!({ "type": "name", "properties": { "name": layer.crs } });
    }
    fc
}

pub fn labels_to_geojson(layer: &LabelLayer) -> Value {
    labels_to_geojson_with(layer, |_, _| {})
}

pub fn read_labels(path: &Path) -> Result<LabelLayer, GeoError> {
    let file = File::open(path).map_err(io_err(path))?;
    let v: Value = serde_json::from_reader(BufReader::new(file)).map_err(|e| decode_err(path, e))?;
    labels_from_geojson(&v)
}

pub fn write_json(path: &Path, v: &impl serde::Serialize) -> Result<(), GeoError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut bytes = serde_json::to_vec_pretty(v).map_err(|e| decode_err(path, e))?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(io_err(path))
}

pub fn write_labels(path: &Path, layer: &LabelLayer) -> Result<(), GeoError> {
    write_json(path, &labels_to_geojson(layer))
}

// ---------------------------------------------------------------------------
// GeoTIFF

/// A decoded GeoTIFF scene.
#[derive(Debug, Clone)]
pub struct GeoTiff {
    pub raster: Raster,
    pub nodata: Option<f64>,
}

impl GeoTiff {
    /// Validity mask: 1 where any band differs from the nodata value.
    pub fn validity(&self) -> BitMask {
        let r = &self.raster;
        match self.nodata {
            None => BitMask::filled(r.width(), r.height()),
            Some(nd) => BitMask::from_fn(r.width(), r.height(), |c, row| {
                (0..r.bands()).any(|b| r.sample(c, row, b) as f64 != nd)
            }),
        }
    }
}

fn geo_keys_crs(keys: &[u16]) -> String {
    if keys.len() < 4 {
        return String::new();
    }
    let n = keys[3] as usize;
    let mut geographic = None;
    for k in 0..n {
        let base = 4 + 4 * k;
        if base + 3 >= keys.len() {
            break;
        }
        let (id, loc, value) = (keys[base], keys[base + 1], keys[base + 3]);
        if loc != 0 {
            continue;
        }
        if id == KEY_PROJECTED_CS_TYPE {
            return format!("EPSG:{value}");
        }
        if id == KEY_GEOGRAPHIC_TYPE {
            geographic = Some(value);
        }
    }
    geographic.map(|v| format!("EPSG:{v}")).unwrap_or_default()
}

/// Read a north-up GeoTIFF (1 or 3 bands, u8 or u16) with its geotransform,
/// CRS and nodata value.
pub fn read_geotiff(path: &Path) -> Result<GeoTiff, GeoError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut dec = Decoder::new(BufReader::new(file)).map_err(|e| decode_err(path, e))?;
    let (width, height) = dec.dimensions().map_err(|e| decode_err(path, e))?;
    let bands = match dec.colortype().map_err(|e| decode_err(path, e))? {
        ColorType::Gray(8) | ColorType::Gray(16) => 1,
        ColorType::RGB(8) | ColorType::RGB(16) => 3,
        other => return Err(GeoError::Unsupported(format!("{other:?} in {}", path.display()))),
    };
    let scale = dec
        .get_tag_f64_vec(Tag::Unknown(TAG_MODEL_PIXEL_SCALE))
        .map_err(|_| decode_err(path, "missing ModelPixelScale tag"))?;
    let tie = dec
        .get_tag_f64_vec(Tag::Unknown(TAG_MODEL_TIEPOINT))
        .map_err(|_| decode_err(path, "missing ModelTiepoint tag"))?;
    if scale.len() < 2 || tie.len() < 6 {
        return Err(decode_err(path, "short georeferencing tags"));
    }
    let crs = dec
        .get_tag_u16_vec(Tag::Unknown(TAG_GEO_KEY_DIRECTORY))
        .map(|k| geo_keys_crs(&k))
        .unwrap_or_default();
    let nodata = dec
        .get_tag_ascii_string(Tag::Unknown(TAG_GDAL_NODATA))
        .ok()
        .and_then(|s| s.trim_matches(char::from(0)).trim().parse::<f64>().ok());
    let transform = GeoTransform::new(
        tie[3] - tie[0] * scale[0],
        tie[4] + tie[1] * scale[1],
        scale[0],
        -scale[1],
        crs,
    )?;
    let pixels = match dec.read_image().map_err(|e| decode_err(path, e))? {
        DecodingResult::U8(v) => PixelBuffer::U8(v),
        DecodingResult::U16(v) => PixelBuffer::U16(v),
        _ => return Err(GeoError::Unsupported(format!("sample format in {}", path.display()))),
    };
    Ok(GeoTiff {
        raster: Raster::new(width, height, bands, pixels, transform)?,
        nodata,
    })
}

/// Write a raster as an uncompressed GeoTIFF carrying its geotransform, CRS
/// (when given as `EPSG:<code>`) and optional nodata value.
pub fn write_geotiff(path: &Path, raster: &Raster, nodata: Option<f64>) -> Result<(), GeoError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let file = File::create(path).map_err(io_err(path))?;
    let mut enc = TiffEncoder::new(BufWriter::new(file)).map_err(|e| decode_err(path, e))?;
    let t = raster.transform();
    let scale = [t.pixel_size_x, -t.pixel_size_y, 0.0];
    let tie = [0.0, 0.0, 0.0, t.origin_x, t.origin_y, 0.0];
    let epsg: Option<u16> = t.crs_id.strip_prefix("EPSG:").and_then(|c| c.parse().ok());
    // GTModelType=Projected, GTRasterType=PixelIsArea, ProjectedCSType.
    let mut keys: Vec<u16> = vec![1, 1, 0, 2, 1024, 0, 1, 1, 1025, 0, 1, 1];
    if let Some(code) = epsg {
        keys[3] = 3;
        keys.extend_from_slice(&[KEY_PROJECTED_CS_TYPE, 0, 1, code]);
    }
    let nodata_str = nodata.map(|v| format!("{v}"));
    let (w, h) = (raster.width(), raster.height());

    macro_rules! write_image {
        ($ct:ty, $data:expr) => {{
            let mut img = enc.new_image::<$ct>(w, h).map_err(|e| decode_err(path, e))?;
            let d = img.encoder();
            d.write_tag(Tag::Unknown(TAG_MODEL_PIXEL_SCALE), &scale[..])
                .map_err(|e| decode_err(path, e))?;
            d.write_tag(Tag::Unknown(TAG_MODEL_TIEPOINT), &tie[..])
                .map_err(|e| decode_err(path, e))?;
            d.write_tag(Tag::Unknown(TAG_GEO_KEY_DIRECTORY), &keys[..])
                .map_err(|e| decode_err(path, e))?;
            if let Some(s) = &nodata_str {
                d.write_tag(Tag::Unknown(TAG_GDAL_NODATA), s.as_str())
                    .map_err(|e| decode_err(path, e))?;
            }
            img.write_data($data).map_err(|e| decode_err(path, e))?;
        }};
    }

    match (raster.pixels(), raster.bands()) {
        (PixelBuffer::U8(v), 3) => write_image!(colortype::RGB8, v),
        (PixelBuffer::U8(v), _) => write_image!(colortype::Gray8, v),
        (PixelBuffer::U16(v), 3) => write_image!(colortype::RGB16, v),
        (PixelBuffer::U16(v), _) => write_image!(colortype::Gray16, v),
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// PNG

fn ensure_parent(path: &Path) -> Result<(), GeoError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    Ok(())
}

/// Write an 8-bit raster as PNG (RGB or gray). Georeferencing goes in a sidecar.
pub fn write_raster_png(path: &Path, raster: &Raster) -> Result<(), GeoError> {
    ensure_parent(path)?;
    let data = raster
        .as_u8()
        .ok_or_else(|| GeoError::Unsupported("PNG clips must be 8-bit".into()))?;
    let ct = if raster.bands() == 3 {
        image::ExtendedColorType::Rgb8
    } else {
        image::ExtendedColorType::L8
    };
    image::save_buffer_with_format(path, data, raster.width(), raster.height(), ct, image::ImageFormat::Png)
        .map_err(|e| decode_err(path, e))
}

/// Read a PNG as a 3-band u8 raster with the given transform.
pub fn read_rgb_png(path: &Path, transform: GeoTransform) -> Result<Raster, GeoError> {
    let img = image::open(path).map_err(|e| decode_err(path, e))?.to_rgb8();
    let (w, h) = img.dimensions();
    Raster::rgb8(w, h, img.into_raw(), transform)
}

/// Single-band PNG with values {0, 255}.
pub fn write_mask_png(path: &Path, mask: &BitMask) -> Result<(), GeoError> {
    write_gray_png(path, mask.width(), mask.height(), &mask.to_bytes(255))
}

pub fn write_gray_png(path: &Path, width: u32, height: u32, data: &[u8]) -> Result<(), GeoError> {
    ensure_parent(path)?;
    image::save_buffer_with_format(
        path,
        data,
        width,
        height,
        image::ExtendedColorType::L8,
        image::ImageFormat::Png,
    )
    .map_err(|e| decode_err(path, e))
}

pub fn read_gray_png(path: &Path) -> Result<(u32, u32, Vec<u8>), GeoError> {
    let img = image::open(path).map_err(|e| decode_err(path, e))?.to_luma8();
    let (w, h) = img.dimensions();
    Ok((w, h, img.into_raw()))
}

/// Read a mask PNG; values ≥ 128 are 1.
pub fn read_mask_png(path: &Path) -> Result<BitMask, GeoError> {
    let (w, h, data) = read_gray_png(path)?;
    let bin: Vec<u8> = data.iter().map(|&v| (v >= 128) as u8).collect();
    BitMask::from_bytes(w, h, &bin)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t() -> GeoTransform {
        GeoTransform::new(712_000.0, 2_305_000.0, 0.5, -0.5, "EPSG:32613").unwrap()
    }

    #[test]
    fn geotiff_round_trip_u16_rgb() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scene.tif");
        let data: Vec<u16> = (0..5 * 4 * 3).map(|i| if i < 3 { 0 } else { i as u16 * 37 }).collect();
        let r = Raster::new(5, 4, 3, PixelBuffer::U16(data), t()).unwrap();
        write_geotiff(&path, &r, Some(0.0)).unwrap();
        let back = read_geotiff(&path).unwrap();
        assert_eq!(back.raster, r);
        assert_eq!(back.nodata, Some(0.0));
        assert_eq!(back.raster.transform().crs_id, "EPSG:32613");
        let valid = back.validity();
        assert!(!valid.get(0, 0));
        assert!(valid.get(1, 0));
    }

    #[test]
    fn geojson_round_trip_keeps_properties() {
        let poly = Polygon::rect(712_000.0, 2_304_000.0, 712_010.0, 2_304_020.0).unwrap();
        let layer = LabelLayer {
            crs: "EPSG:32613".into(),
            labels: vec![ParcelLabel::new("p1", poly, Maturity::Young, Provenance::ModelApproved, 2).unwrap()],
        };
        let v = labels_to_geojson(&layer);
        assert_eq!(v["features"][0]["properties"]["maturity"], "young");
        assert_eq!(v["features"][0]["properties"]["provenance"], "model_approved");
        assert_eq!(labels_from_geojson(&v).unwrap(), layer);
    }

    #[test]
    fn geojson_rejects_open_ring() {
        let v = json!({"type": "Polygon", "coordinates": [[[0, 0], [1, 0], [1, 1], [0, 1]]]});
        assert!(polygon_from_geojson(&v).is_err());
    }

    #[test]
    fn mask_png_uses_0_and_255() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        let m = BitMask::from_fn(7, 3, |c, r| c == r);
        write_mask_png(&path, &m).unwrap();
        let (_, _, raw) = read_gray_png(&path).unwrap();
        assert!(raw.iter().all(|&v| v == 0 || v == 255));
        assert_eq!(read_mask_png(&path).unwrap(), m);
    }
}
