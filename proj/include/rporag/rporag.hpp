#pragma once

#include "rporag/error.hpp"
#include "rporag/kg.hpp"
#include "rporag/rng.hpp"
#include "rporag/embedding.hpp"
#include "rporag/remote_embedder.hpp"
#include "rporag/sampler.hpp"
#include "rporag/retriever.hpp"
#include "rporag/type_predictor.hpp"
#include "rporag/preference.hpp"
#include "rporag/prompt.hpp"
#include "rporag/eval.hpp"
#include "rporag/schema.hpp"
#include "rporag/io.hpp"
#include "rporag/pipeline.hpp"
