from .detector import BlobDetector, Detection, Detector, Frame, NormalizedBox, detect_blob
from .gestures import (
    GESTURE_NAMES, GestureError, MlpParams, TrainConfig, TrainingError,
    gesture_template, init_params, load_dataset_csv, load_model, mlp_forward,
    mlp_loss_and_grad, predict_gesture, save_dataset_csv, save_model,
    stratified_split, synth_gesture_dataset, train_gestures,
)

__all__ = [
    "BlobDetector", "Detection", "Detector", "Frame", "NormalizedBox", "detect_blob",
    "GESTURE_NAMES", "GestureError", "MlpParams", "TrainConfig", "TrainingError",
    "gesture_template", "init_params", "load_dataset_csv", "load_model", "mlp_forward",
    "mlp_loss_and_grad", "predict_gesture", "save_dataset_csv", "save_model",
    "stratified_split", "synth_gesture_dataset", "train_gestures",
]
