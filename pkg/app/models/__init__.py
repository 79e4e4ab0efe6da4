from app.models.training_run import TrainingRun
from app.models.epoch_metric import EpochMetric
from app.models.pseudo_seed import PseudoSeedAdmission
