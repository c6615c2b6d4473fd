#pragma once

#include "detriever/errors.hpp"
#include "detriever/eval_harness.hpp"
#include "detriever/hsc_store.hpp"
#include "detriever/nn_core.hpp"
#include "detriever/proxy_labeler.hpp"
#include "detriever/retrieval_index.hpp"
#include "detriever/retriever_model.hpp"
#include "detriever/trainer.hpp"
