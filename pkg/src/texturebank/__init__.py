"""Texture, material, and region recognition with orderless filter-bank pooling."""

from .dsift import SiftConfig, dense_sift
from .encode import (
    EncodedDescriptor,
    EncoderConfig,
    FvStats,
    encode_bow,
    encode_fv,
    encode_vlad,
    fisher_statistics,
    fisher_vector_from_stats,
)
from .errors import TextureBankError
from .evaluate import EvalReport, class_normalized_accuracy, mean_ap_11pt, per_pixel_accuracy
from .field import FeatureField, RegionMask, read_tensor, write_tensor
from .gmm import GmmFit, GmmModel, kmeans, train_gmm
from .image import ImagePlane, read_pnm, rescale_image, scale_ladder, to_gray, write_pnm
from .net import Convolution, FullyConnected, MaxPool, NetSpec, ReLU, TapPoint, run_net
from .pca import PcaModel, apply_pca, train_pca
from .pyramid import extract_pyramid
from .regions import (
    LabelMap,
    Proposal,
    WarpSpec,
    describe_region_fc,
    describe_region_fv,
    paste_proposals,
    superpixels,
)
from .svm import SvmBank, SvmConfig, calibrate, predict, train_svm

__version__ = "0.1.0"
