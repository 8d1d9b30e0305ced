"""Plain-text ``key = value`` job configuration.

Every key has a documented default; unknown keys are rejected. Lines
starting with '#' and blank lines are ignored.
"""

from __future__ import annotations

from pathlib import Path

from .augment import AugmentConfig
from .classifier import ClassifierConfig
from .dcgan import GanConfig
from .errors import ConfigError
from .imageproc import PreprocessConfig


def _bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int_list(text: str) -> tuple:
    return tuple(int(part) for part in text.split(",") if part.strip())


# key -> (parser, default, help)
SCHEMA = {
    "seed": (int, 0, "global random seed"),
    "threads": (int, 1, "worker threads for preprocessing (1 = bitwise reproducible)"),
    "data.root": (str, "", "dataset root (class directories or manifest.csv)"),
    "out.dir": (str, "out", "output directory for all artifacts"),
    "preprocess.circle_threshold": (int, 10, "foreground threshold for circle-crop"),
    "preprocess.median_window": (int, 31, "median window (odd) in subtract mode"),
    "preprocess.median_mode": (str, "subtract", "median stage mode: subtract | filter"),
    "preprocess.gamma": (float, 1.2, "gamma correction exponent"),
    "preprocess.clahe_tiles": (int, 8, "CLAHE tile grid (NxN)"),
    "preprocess.clahe_clip": (float, 2.0, "CLAHE clip limit (x uniform bin height)"),
    "preprocess.target_size": (int, 224, "output image size"),
    "augment.rotation_max": (float, 20.0, "max rotation, degrees"),
    "augment.shift_max": (float, 0.20, "max width/height shift fraction"),
    "augment.shear_max": (float, 10.0, "max shear, degrees"),
    "augment.zoom_max": (float, 0.20, "max zoom fraction"),
    "augment.hflip": (_bool, True, "enable horizontal flips"),
    "augment.brightness_min": (float, 0.8, "brightness factor lower bound"),
    "augment.brightness_max": (float, 1.2, "brightness factor upper bound"),
    "gan.latent_dim": (int, 100, "latent vector dimension"),
    "gan.image_size": (int, 128, "GAN image size (power of two >= 32)"),
    "gan.batch_size": (int, 4, "GAN batch size"),
    "gan.epochs": (int, 10, "GAN epochs"),
    "gan.steps_per_epoch": (int, 3750, "GAN steps per epoch"),
    "gan.learning_rate": (float, 0.0002, "GAN Adam learning rate"),
    "gan.beta1": (float, 0.5, "GAN Adam beta1"),
    "classifier.widths": (_int_list, (64, 128, 256), "residual stage channel widths"),
    "classifier.fc": (_int_list, (512,), "fully connected layer widths"),
    "classifier.input_size": (int, 224, "classifier input size"),
    "classifier.stem_channels": (int, 64, "stem convolution channels"),
    "train.batch_size": (int, 32, "classifier batch size"),
    "train.epochs": (int, 50, "max classifier epochs"),
    "train.learning_rate": (float, 0.001, "initial learning rate"),
    "train.patience": (int, 15, "early stopping patience"),
    "train.inject_class1": (str, "", "generator checkpoint for class 1 (Mild)"),
    "train.inject_class2": (str, "", "generator checkpoint for class 2 (Moderate)"),
    "train.inject_class3": (str, "", "generator checkpoint for class 3 (Severe)"),
    "train.inject_class4": (str, "", "generator checkpoint for class 4 (Proliferative)"),
    "train.inject_count": (int, 0, "synthetic images per class (0 = fill to half majority)"),
}


class JobConfig:
    def __init__(self, values: dict | None = None):
        self.values = {key: default for key, (_, default, _) in SCHEMA.items()}
        if values:
            for key, value in values.items():
                self.set(key, value)

    def set(self, key: str, raw):
        if key not in SCHEMA:
            raise ConfigError(f"unknown configuration key {key!r}")
        parser = SCHEMA[key][0]
        try:
            self.values[key] = parser(raw) if isinstance(raw, str) else raw
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from exc

    def __getitem__(self, key: str):
        if key not in SCHEMA:
            raise ConfigError(f"unknown configuration key {key!r}")
        return self.values[key]

    @classmethod
    def load(cls, path) -> "JobConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        config = cls()
        for lineno, line in enumerate(path.read_text().splitlines(), start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, _, raw = stripped.partition("=")
            config.set(key.strip(), raw.strip())
        return config

    def dump(self) -> str:
        return "\n".join(f"{k}={self.values[k]}" for k in sorted(self.values))

    # typed sub-configs -------------------------------------------------------

    def preprocess_config(self) -> PreprocessConfig:
        return PreprocessConfig(
            circle_threshold=self["preprocess.circle_threshold"],
            median_window=self["preprocess.median_window"],
            median_mode=self["preprocess.median_mode"],
            gamma=self["preprocess.gamma"],
            clahe_tiles=self["preprocess.clahe_tiles"],
            clahe_clip=self["preprocess.clahe_clip"],
            target_size=self["preprocess.target_size"],
        )

    def augment_config(self) -> AugmentConfig:
        return AugmentConfig(
            rotation_max=self["augment.rotation_max"],
            shift_max=self["augment.shift_max"],
            shear_max=self["augment.shear_max"],
            zoom_max=self["augment.zoom_max"],
            hflip=self["augment.hflip"],
            brightness_range=(self["augment.brightness_min"], self["augment.brightness_max"]),
        )

    def gan_config(self) -> GanConfig:
        return GanConfig(
            latent_dim=self["gan.latent_dim"],
            image_size=self["gan.image_size"],
            batch_size=self["gan.batch_size"],
            epochs=self["gan.epochs"],
            steps_per_epoch=self["gan.steps_per_epoch"],
            learning_rate=self["gan.learning_rate"],
            beta1=self["gan.beta1"],
            seed=self["seed"],
        )

    def classifier_config(self) -> ClassifierConfig:
        return ClassifierConfig(
            stage_widths=self["classifier.widths"],
            fc_widths=self["classifier.fc"],
            input_size=self["classifier.input_size"],
            stem_channels=self["classifier.stem_channels"],
            seed=self["seed"],
        )

    def injection_map(self) -> dict:
        out = {}
        for cls in (1, 2, 3, 4):
            path = self[f"train.inject_class{cls}"]
            if path:
                out[cls] = path
        return out
