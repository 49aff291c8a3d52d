from crowdnms.geometry import BBox, RelCoeffs, area, iou, iof, encode_relative, decode_relative, gaussian_likelihood
from crowdnms.suppression import (Detection, SuppressionConfig, SuppressionResult, Rescorer, rescore, suppress,
                                  suppress_reference, suppression_field, step_likelihood)
from crowdnms.datasets import (GroundTruthScene, GeneratorConfig, OracleConfig, generate_scene, generate_scenes,
                               generate_proposals, annotate_oracle, verify_oracle, crowd_statistics)
from crowdnms.metrics import (MatchOutcome, PRCurve, MetricReport, match_image, average_precision, recall_at_k,
                              log_average_miss_rate, evaluate)
