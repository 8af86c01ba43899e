"""Two-stage encoder: wire formats -> domain records -> RDF resource graphs."""

from .decoders import DECODERS, UnknownFormat, decode_payload
from .graphs import (
    GRAPH_ENCODERS,
    MAPPING_TABLE,
    decode_graph,
    encode_record,
    resource_iri,
    resource_shape,
    resource_shapes,
)
from .stage import (
    ComponentRegistry,
    EncoderStage,
    StageCounters,
    decode_input,
    default_registry,
    graph_from_payload,
    graph_to_payload,
    run_encoder,
)
