use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ppm::{load_ppm, save_ppm};
use super::voc::{parse_voc, write_voc, Annotation, Object};
use crate::error::{Error, Result};
use crate::geometry::SoftBox;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const IMAGES_DIR: &str = "JPEGImages";
pub const ANNOTATIONS_DIR: &str = "Annotations";
pub const CLASSES_FILE: &str = "classes.txt";

/// Ordered class names; the position is the class id.
#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct ClassRegistry {
    names: Vec<String>,
}

impl ClassRegistry {
    pub fn new(names: Vec<String>) -> Result<Self> {
        for (i, n) in names.iter().enumerate() {
            if n.is_empty() || names[..i].contains(n) {
                return Err(Error::Invalid(format!("class name `{n}` is empty or repeated")));
            }
        }
        Ok(ClassRegistry { names })
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::new(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
    }

    pub fn to_text(&self) -> String {
        self.names.iter().map(|n| format!("{n}\n")).collect()
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Converts annotation objects to boxes with one-hot class vectors.
    pub fn soft_boxes(&self, ann: &Annotation) -> Result<Vec<SoftBox>> {
        ann.objects
            .iter()
            .enumerate()
            .map(|(i, o)| {
                let id = self.id(&o.name).ok_or_else(|| Error::Annotation {
                    path: format!("{}: object[{}]/name", ann.image, i + 1),
                    msg: format!("unknown class `{}`", o.name),
                })?;
                let mut b = SoftBox::hard(o.bbox, id, self.len());
                b.weight = o.weight;
                Ok(b)
            })
            .collect()
    }

    /// Inverse of [`ClassRegistry::soft_boxes`], naming each box by its most
    /// likely class.
    pub fn objects(&self, boxes: &[SoftBox]) -> Vec<Object> {
        boxes
            .iter()
            .map(|b| Object { name: self.names[b.class_id()].clone(), bbox: b.bbox, weight: b.weight })
            .collect()
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Sample {
    pub image: PathBuf,
    pub annotation: PathBuf,
}

/// A dataset directory: `JPEGImages/`, `Annotations/` and `classes.txt`.
#[derive(Clone, PartialEq, Debug)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub classes: ClassRegistry,
    /// Sorted by annotation file name.
    pub samples: Vec<Sample>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl DatasetIndex {
    /// Creates the directory layout and writes `classes.txt`.
    pub fn create(root: impl AsRef<Path>, classes: ClassRegistry) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        for d in [IMAGES_DIR, ANNOTATIONS_DIR] {
            let p = root.join(d);
            fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        let p = root.join(CLASSES_FILE);
        fs::write(&p, classes.to_text()).map_err(|e| Error::io(&p, e))?;
        Ok(DatasetIndex { root, classes, samples: Vec::new(), train: Vec::new(), test: Vec::new() })
    }

    /// Writes one image/annotation pair named `stem` and indexes it. The
    /// annotation's image name is set to `<stem>.ppm`.
    pub fn add_sample<T: Scalar>(&mut self, stem: &str, image: &Tensor<T>, ann: &Annotation) -> Result<()> {
        let file = format!("{stem}.ppm");
        let image_path = self.root.join(IMAGES_DIR).join(&file);
        let ann_path = self.root.join(ANNOTATIONS_DIR).join(format!("{stem}.xml"));
        save_ppm(image, &image_path)?;
        let mut a = ann.clone();
        a.image = file;
        fs::write(&ann_path, write_voc(&a)).map_err(|e| Error::io(&ann_path, e))?;
        self.samples.push(Sample { image: image_path, annotation: ann_path });
        Ok(())
    }

    /// Indexes an existing directory. Every annotation must name an image that
    /// exists and only use registered classes.
    pub fn scan(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let cp = root.join(CLASSES_FILE);
        let classes = ClassRegistry::parse(&fs::read_to_string(&cp).map_err(|e| Error::io(&cp, e))?)?;
        let adir = root.join(ANNOTATIONS_DIR);
        let mut files: Vec<PathBuf> = fs::read_dir(&adir)
            .map_err(|e| Error::io(&adir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "xml"))
            .collect();
        files.sort();
        let mut samples = Vec::with_capacity(files.len());
        for annotation in files {
            let ann = read_annotation(&annotation)?;
            classes.soft_boxes(&ann)?;
            let image = root.join(IMAGES_DIR).join(&ann.image);
            if !image.is_file() {
                return Err(Error::Annotation {
                    path: annotation.display().to_string(),
                    msg: format!("image `{}` not found", image.display()),
                });
            }
            samples.push(Sample { image, annotation });
        }
        Ok(DatasetIndex { root, classes, samples, train: Vec::new(), test: Vec::new() })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn load<T: Scalar>(&self, i: usize) -> Result<(Tensor<T>, Annotation)> {
        let s = &self.samples[i];
        let image: Tensor<T> = load_ppm(&s.image)?;
        let ann = read_annotation(&s.annotation)?;
        let sh = image.shape();
        if (sh.w, sh.h) != (ann.width, ann.height) {
            return Err(Error::Annotation {
                path: s.annotation.display().to_string(),
                msg: format!("size {}x{} but image is {}x{}", ann.width, ann.height, sh.w, sh.h),
            });
        }
        Ok((image, ann))
    }
}

fn read_annotation(path: &Path) -> Result<Annotation> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_voc(&text).map_err(|e| match e {
        Error::Annotation { path: p, msg } => Error::Annotation { path: format!("{}: {p}", path.display()), msg },
        other => other,
    })
}

/// Seeded shuffle; the first ⌈ratio·n⌉ samples train, the rest test.
pub fn split_dataset(index: &DatasetIndex, ratio: f64, seed: u64) -> Result<DatasetIndex> {
    if index.is_empty() {
        return Err(Error::Invalid("cannot split an empty dataset".into()));
    }
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::Invalid(format!("split ratio {ratio} outside [0, 1]")));
    }
    let n = index.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((ratio * n as f64) - 1e-9).ceil().max(0.0) as usize;
    let mut out = index.clone();
    out.train = order[..n_train].to_vec();
    out.test = order[n_train..].to_vec();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn index(n: usize) -> DatasetIndex {
        DatasetIndex {
            root: PathBuf::new(),
            classes: ClassRegistry::default(),
            samples: (0..n)
                .map(|i| Sample { image: format!("{i}.ppm").into(), annotation: format!("{i}.xml").into() })
                .collect(),
            train: vec![],
            test: vec![],
        }
    }

    #[test]
    fn split_sizes() {
        let s = split_dataset(&index(10), 0.8, 1).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (8, 2));
        let again = split_dataset(&index(10), 0.8, 1).unwrap();
        assert_eq!(s.train, again.train);
        let one = split_dataset(&index(1), 0.8, 1).unwrap();
        assert_eq!((one.train.len(), one.test.len()), (1, 0));
        assert!(split_dataset(&index(0), 0.8, 1).is_err());
    }

    #[test]
    fn registry() {
        let r = ClassRegistry::parse("fish\n\ncrab\n").unwrap();
        assert_eq!(r.id("crab"), Some(1));
        assert_eq!(ClassRegistry::parse(&r.to_text()).unwrap(), r);
        assert!(ClassRegistry::parse("a\na\n").is_err());
    }
}
