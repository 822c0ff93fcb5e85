#pragma once

#include "caplevel/cider.hpp"
#include "caplevel/corpus.hpp"
#include "caplevel/curate.hpp"
#include "caplevel/ensemble.hpp"
#include "caplevel/error.hpp"
#include "caplevel/fixture.hpp"
#include "caplevel/io.hpp"
#include "caplevel/matrix.hpp"
#include "caplevel/numerics.hpp"
#include "caplevel/parallel.hpp"
#include "caplevel/pipeline.hpp"
#include "caplevel/random.hpp"
#include "caplevel/rerank.hpp"
#include "caplevel/version.hpp"
