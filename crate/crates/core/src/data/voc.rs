use roxmltree::{Document, Node};

use crate::error::{Error, Result};
use crate::geometry::BBox;

#[derive(Clone, PartialEq, Debug)]
pub struct Object {
    pub name: String,
    pub bbox: BBox<f64>,
    /// Label weight from the `weight` attribute; 1 for ordinary annotations.
    pub weight: f64,
}

#[derive(Clone, PartialEq, Debug)]
pub struct Annotation {
    /// File name of the image, relative to the images directory.
    pub image: String,
    pub width: usize,
    pub height: usize,
    pub objects: Vec<Object>,
}

impl Annotation {
    pub fn new(image: impl Into<String>, width: usize, height: usize) -> Self {
        Annotation { image: image.into(), width, height, objects: Vec::new() }
    }
}

fn err(path: &str, msg: impl Into<String>) -> Error {
    Error::Annotation { path: path.to_string(), msg: msg.into() }
}

fn child<'a, 'i>(node: Node<'a, 'i>, name: &str, path: &str) -> Result<Node<'a, 'i>> {
    node.children().find(|c| c.has_tag_name(name)).ok_or_else(|| err(&format!("{path}/{name}"), "missing element"))
}

fn text_of(node: Node<'_, '_>, name: &str, path: &str) -> Result<String> {
    Ok(child(node, name, path)?.text().unwrap_or("").trim().to_string())
}

fn number(node: Node<'_, '_>, name: &str, path: &str) -> Result<f64> {
    let t = text_of(node, name, path)?;
    let v: f64 = t.parse().map_err(|_| err(&format!("{path}/{name}"), format!("`{t}` is not a number")))?;
    if !v.is_finite() {
        return Err(err(&format!("{path}/{name}"), "not finite"));
    }
    Ok(v)
}

fn dimension(node: Node<'_, '_>, name: &str, path: &str) -> Result<usize> {
    let t = text_of(node, name, path)?;
    match t.parse::<usize>() {
        Ok(v) if v > 0 => Ok(v),
        _ => Err(err(&format!("{path}/{name}"), format!("`{t}` is not a positive integer"))),
    }
}

/// Parses the supported VOC subset: `filename`, `size`, and `object` elements
/// with `name` and `bndbox` corners. Boxes must be non-empty and inside the
/// frame; nothing is clamped.
pub fn parse_voc(xml: &str) -> Result<Annotation> {
    let doc = Document::parse(xml).map_err(|e| err("annotation", format!("malformed XML: {e}")))?;
    let root = doc.root_element();
    if !root.has_tag_name("annotation") {
        return Err(err(root.tag_name().name(), "root element must be `annotation`"));
    }
    let image = text_of(root, "filename", "annotation")?;
    let size = child(root, "size", "annotation")?;
    let width = dimension(size, "width", "annotation/size")?;
    let height = dimension(size, "height", "annotation/size")?;
    let mut ann = Annotation::new(image, width, height);
    for (i, obj) in root.children().filter(|c| c.has_tag_name("object")).enumerate() {
        let path = format!("annotation/object[{}]", i + 1);
        let name = text_of(obj, "name", &path)?;
        if name.is_empty() {
            return Err(err(&format!("{path}/name"), "empty class name"));
        }
        let weight = match obj.attribute("weight") {
            None => 1.0,
            Some(w) => match w.parse::<f64>() {
                Ok(v) if (0.0..=1.0).contains(&v) => v,
                _ => return Err(err(&format!("{path}@weight"), format!("`{w}` is not in [0, 1]"))),
            },
        };
        let bpath = format!("{path}/bndbox");
        let b = child(obj, "bndbox", &path)?;
        let (x0, y0) = (number(b, "xmin", &bpath)?, number(b, "ymin", &bpath)?);
        let (x1, y1) = (number(b, "xmax", &bpath)?, number(b, "ymax", &bpath)?);
        if x1 <= x0 {
            return Err(err(&format!("{bpath}/xmax"), format!("xmax {x1} <= xmin {x0}")));
        }
        if y1 <= y0 {
            return Err(err(&format!("{bpath}/ymax"), format!("ymax {y1} <= ymin {y0}")));
        }
        if x0 < 0.0 || y0 < 0.0 || x1 > width as f64 || y1 > height as f64 {
            return Err(err(&bpath, format!("box ({x0}, {y0})-({x1}, {y1}) outside the {width}x{height} frame")));
        }
        ann.objects.push(Object { name, bbox: BBox::from_corners(x0, y0, x1, y1), weight });
    }
    Ok(ann)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Serializes an annotation. A `weight` attribute is written only for objects
/// whose weight differs from 1.
pub fn write_voc(a: &Annotation) -> String {
    let mut s = String::from("<annotation>\n");
    s.push_str("  <folder>JPEGImages</folder>\n");
    s.push_str(&format!("  <filename>{}</filename>\n", escape(&a.image)));
    s.push_str(&format!(
        "  <size>\n    <width>{}</width>\n    <height>{}</height>\n    <depth>3</depth>\n  </size>\n",
        a.width, a.height
    ));
    for o in &a.objects {
        if o.weight == 1.0 {
            s.push_str("  <object>\n");
        } else {
            s.push_str(&format!("  <object weight=\"{}\">\n", o.weight));
        }
        s.push_str(&format!("    <name>{}</name>\n", escape(&o.name)));
        s.push_str(&format!(
            "    <bndbox>\n      <xmin>{}</xmin>\n      <ymin>{}</ymin>\n      <xmax>{}</xmax>\n      <ymax>{}</ymax>\n    </bndbox>\n",
            o.bbox.x,
            o.bbox.y,
            o.bbox.right(),
            o.bbox.bottom()
        ));
        s.push_str("  </object>\n");
    }
    s.push_str("</annotation>\n");
    s
}
