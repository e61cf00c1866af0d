#pragma once

#include "deepretrieval/bench.hpp"
#include "deepretrieval/checkpoint.hpp"
#include "deepretrieval/config_json.hpp"
#include "deepretrieval/coordinate_descent.hpp"
#include "deepretrieval/core_math.hpp"
#include "deepretrieval/data.hpp"
#include "deepretrieval/em_trainer.hpp"
#include "deepretrieval/error.hpp"
#include "deepretrieval/item_path_mapping.hpp"
#include "deepretrieval/metrics.hpp"
#include "deepretrieval/random.hpp"
#include "deepretrieval/reranker.hpp"
#include "deepretrieval/retrieval.hpp"
#include "deepretrieval/score_table.hpp"
#include "deepretrieval/structure_model.hpp"
#include "deepretrieval/types.hpp"
