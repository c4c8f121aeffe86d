from .backdoor import (
    ATTACK_KINDS,
    AttackConfig,
    BackdoorTestSet,
    build_backdoor_testset,
    check_fairness,
    combined_rand_trigger,
    fairness_holds,
    make_trigger_pool,
    place_rand_trigger,
)
from .gap import customized_trigger_location, gap_statistic, kmeans_1d
from .generator import (
    GeneratorConfig,
    ImportanceScores,
    TriggerGenerator,
    generate_trigger,
    global_trigger,
    node_importance,
    select_location,
    train_generator_step,
    trigger_shape,
)
from .trigger import (
    Trigger,
    TriggerShape,
    complete_edges,
    definable_trigger_location,
    inject_trigger,
    rand_er_trigger,
    random_location,
)
