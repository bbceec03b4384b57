from enum import Enum


class ModelKind(Enum):
    """Class to represent the statistical models that can be fit."""

    TYPICAL = 0
    """Linear spatial model: intercept, covariates, one Gaussian process, noise."""
    MIXTURE = 1
    """Two spatial processes selected per location by a latent Bernoulli process."""

    @property
    def label(self) -> str:
        """Lower case name used in files and on the command line."""
        return self.name.lower()

    @classmethod
    def from_label(cls, label: str) -> "ModelKind":
        """
        Finds the model kind with the given (case insensitive) name.

        Args:
            label: name such as "typical" or "mixture"

        Returns:
            the matching model kind
        """
        try:
            return cls.__members__[label.upper()]
        except KeyError:
            raise ValueError(
                f"Unknown model {label!r}; expected one of "
                f"{[member.label for member in cls]}."
            )


class CvScheme(Enum):
    """Class to represent the ways held-out data are chosen for cross-validation."""

    RANDOM = 0
    """A single fold holding out a seeded uniform random fraction of points."""
    BY_ORBIT = 1
    """One fold per orbit label, holding out every footprint of that orbit."""

    @property
    def label(self) -> str:
        """Lower case name used in files and on the command line."""
        return self.name.lower().replace("_", "-")

    @classmethod
    def from_label(cls, label: str) -> "CvScheme":
        """
        Finds the scheme with the given name ("random" or "by-orbit").

        Args:
            label: name of the scheme; underscores and hyphens are equivalent

        Returns:
            the matching scheme
        """
        try:
            return cls.__members__[label.upper().replace("-", "_")]
        except KeyError:
            raise ValueError(
                f"Unknown cross-validation scheme {label!r}; expected one of "
                f"{[member.label for member in cls]}."
            )
