#pragma once

#include "lmds/ablation.hpp"
#include "lmds/classifier.hpp"
#include "lmds/corpus_io.hpp"
#include "lmds/error.hpp"
#include "lmds/featurizer.hpp"
#include "lmds/http_backend.hpp"
#include "lmds/labeler.hpp"
#include "lmds/mock_labelers.hpp"
#include "lmds/selector.hpp"
#include "lmds/synthetic.hpp"
