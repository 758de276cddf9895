use regex::Regex;

use crate::model::{Dataset, SchemaSpec, TemplateString};
use crate::ops::{
    GleaningConfig, OperationDef, OperatorKind, OutputSpec, ParallelPrompt, PeripheralSpec,
    SplitMethodKind, SplitMethodKwargs, GLOBAL_REDUCE_KEY,
};
use crate::optimizer::{AgentError, AgentInterface};

use super::{
    gen_chunk_candidates, gen_fold_batch_candidates, ChunkCandidate, DirectiveId, SubPipeline,
    CHUNK_CONTENT_PLACEHOLDER,
};

/// Deterministic parameters feeding directive instantiation, produced by
/// the candidate generators from the context limit and sample statistics.
#[derive(Debug, Clone)]
pub struct RewriteParams {
    pub chunk_candidates: Vec<ChunkCandidate>,
    pub fold_batch_candidates: Vec<usize>,
    pub gleaning_k: u32,
}

impl RewriteParams {
    pub fn derive(context_limit: usize, avg_doc_tokens: usize, gleaning_k: u32) -> Self {
        Self {
            chunk_candidates: gen_chunk_candidates(context_limit, avg_doc_tokens),
            fold_batch_candidates: gen_fold_batch_candidates(
                context_limit,
                avg_doc_tokens.max(1),
            ),
            gleaning_k,
        }
    }
}

/// Instantiates a directive on a sub-pipeline: one candidate per parameter
/// point, each replacing the matched suffix with the directive's
/// expansion. The agent fills in prompts, schemas, and keys for new
/// operations and may decline the rewrite entirely (empty list). Every
/// returned candidate validates against the sub-pipeline's input schema.
pub fn apply_directive(
    d: DirectiveId,
    sp: &SubPipeline,
    agent: &dyn AgentInterface,
    sample: &Dataset,
    params: &RewriteParams,
) -> Result<Vec<SubPipeline>, AgentError> {
    debug_assert!(sp.kinds().ends_with(d.pattern()), "directive must match");
    let candidates = match d {
        DirectiveId::Chunking => chunking(sp, agent, sample, params)?,
        DirectiveId::Metadata => metadata(sp, agent, sample)?,
        DirectiveId::HeaderExtraction => header_extraction(sp, agent, sample)?,
        DirectiveId::ChunkFiltering => chunk_filtering(sp, agent, sample)?,
        DirectiveId::FlattenList => flatten_list(sp),
        DirectiveId::MultiLevelReduce => multilevel_reduce(sp, agent, sample)?,
        DirectiveId::GleanMap | DirectiveId::GleanReduce => glean(d, sp, agent, sample, params)?,
        DirectiveId::ResolveBeforeReduce => resolve_before_reduce(sp, agent, sample)?,
        DirectiveId::MapChaining => map_chaining(sp, agent, sample)?,
        DirectiveId::ParallelizeMap => parallelize_map(sp, agent, sample)?,
        DirectiveId::PreAggregation => pre_aggregation(sp, agent, sample)?,
        DirectiveId::PreJoinMap => pre_join_map(sp, agent, sample)?,
    };
    // Schema compatibility is a hard postcondition: anything the agent
    // broke is silently excluded rather than surfaced as a failing plan.
    Ok(candidates
        .into_iter()
        .filter(|c| c.validate().is_empty())
        .collect())
}

fn split_suffix<'a>(sp: &'a SubPipeline, n: usize) -> (&'a [OperationDef], &'a [OperationDef]) {
    sp.ops.split_at(sp.ops.len() - n)
}

fn rebuilt(sp: &SubPipeline, prefix: &[OperationDef], suffix: Vec<OperationDef>) -> SubPipeline {
    let mut ops = prefix.to_vec();
    ops.extend(suffix);
    SubPipeline {
        ops,
        input_schema: sp.input_schema.clone(),
    }
}

fn schema(entries: &[(&str, &str)]) -> SchemaSpec {
    SchemaSpec::parse_entries(entries.iter().copied()).expect("static schema")
}

/// The first top-level document attribute a template reads through the
/// given root binding.
fn first_attr(template: &TemplateString, root: &str) -> Option<String> {
    template.referenced_paths().into_iter().find_map(|p| {
        let mut parts = p.split('.');
        (parts.next() == Some(root))
            .then(|| parts.next().map(str::to_string))
            .flatten()
    })
}

/// Substitutes the placeholder content key in a generated gather
/// configuration with the actual chunk attribute.
fn retarget(peripheral: &PeripheralSpec, content_key: &str) -> PeripheralSpec {
    let mut out = peripheral.clone();
    for section in [&mut out.previous, &mut out.next].into_iter().flatten() {
        for sub in [&mut section.head, &mut section.middle, &mut section.tail]
            .into_iter()
            .flatten()
        {
            if sub.content_key == CHUNK_CONTENT_PLACEHOLDER {
                sub.content_key = content_key.to_string();
            }
        }
    }
    out
}

/// Rewrites `input.<attr>` references to `input.<replacement>` without
/// touching attributes that merely share the prefix.
fn retarget_prompt(prompt: &TemplateString, attr: &str, replacement: &str) -> TemplateString {
    let pattern = Regex::new(&format!(r"\binput\.{}\b", regex::escape(attr)))
        .expect("escaped attr compiles");
    TemplateString::new(
        pattern
            .replace_all(&prompt.source, format!("input.{replacement}"))
            .into_owned(),
    )
}

fn synthesize(
    agent: &dyn AgentInterface,
    d: DirectiveId,
    skeleton: OperationDef,
    sample: &Dataset,
) -> Result<Option<OperationDef>, AgentError> {
    if skeleton.kind.uses_llm() {
        agent.synthesize_config(d, &skeleton, sample)
    } else {
        Ok(Some(skeleton))
    }
}

/// Map ⇒ Split → Gather → Map → Reduce, one candidate per chunking
/// parameter point. The reduce is keyed on the split's document id, so
/// each original document yields exactly one final document.
fn chunking(
    sp: &SubPipeline,
    agent: &dyn AgentInterface,
    sample: &Dataset,
    params: &RewriteParams,
) -> Result<Vec<SubPipeline>, AgentError> {
    let (prefix, suffix) = split_suffix(sp, 1);
    let map = &suffix[0];
    let Some(prompt) = &map.prompt else {
        return Ok(Vec::new());
    };
    let Some(split_key) = first_attr(prompt, "input") else {
        return Ok(Vec::new());
    };
    let chunk_attr = format!("{split_key}_chunk");
    let split_name = format!("{}_split", map.name);
    let rendered_attr = format!("{chunk_attr}_rendered");

    // The per-chunk map and the merging reduce are the same for every
    // parameter point, so the agent is consulted once.
    let mut submap = map.clone();
    submap.name = format!("{}_chunk", map.name);
    submap.prompt = Some(retarget_prompt(prompt, &split_key, &rendered_attr));
    let Some(submap) = synthesize(agent, DirectiveId::Chunking, submap, sample)? else {
        return Ok(Vec::new());
    };

    let mut reduce = OperationDef::new(format!("{}_combine", map.name), OperatorKind::Reduce);
    reduce.reduce_key = vec![format!("{split_name}_id")];
    reduce.prompt = Some(TemplateString::new(
        "The following results were extracted from consecutive chunks of one document. \
         Combine them into a single result.\n\
         {% for item in inputs %}{{ item }}\n{% endfor %}",
    ));
    reduce.output = map.output.clone();
    let Some(reduce) = synthesize(agent, DirectiveId::Chunking, reduce, sample)? else {
        return Ok(Vec::new());
    };

    let mut out = Vec::new();
    for candidate in &params.chunk_candidates {
        let mut split = OperationDef::new(&split_name, OperatorKind::Split);
        split.split_key = Some(split_key.clone());
        split.method = Some(SplitMethodKind::TokenCount);
        split.method_kwargs = Some(SplitMethodKwargs {
            num_tokens: Some(candidate.chunk_tokens),
            delimiter: None,
        });

        let mut gather = OperationDef::new(format!("{}_gather", map.name), OperatorKind::Gather);
        gather.content_key = Some(chunk_attr.clone());
        gather.doc_id_key = Some(split.split_id_attr());
        gather.order_key = Some(split.split_chunk_num_attr());
        gather.peripheral_chunks = Some(retarget(&candidate.gather, &chunk_attr));

        out.push(rebuilt(
            sp,
            prefix,
            vec![split, gather, submap.clone(), reduce.clone()],
        ));
    }
    Ok(out)
}

/// Split ⇒ Map → Split: document-level metadata extracted once, carried
/// into every chunk. Declined when the agent sees no valuable metadata.
fn metadata(
    sp: &SubPipeline,
    agent: &dyn AgentInterface,
    sample: &Dataset,
) -> Result<Vec<SubPipeline>, AgentError> {
    let (prefix, suffix) = split_suffix(sp, 1);
    let split = &suffix[0];
    let Some(key) = &split.split_key else {
        return Ok(Vec::new());
    };
    let mut extract = OperationDef::new(format!("{}_metadata", split.name), OperatorKind::Map);
    extract.prompt = Some(TemplateString::new(format!(
        "Extract document-level metadata (such as title, date, or source) that should \
         accompany every chunk of this document:\n{{{{ input.{key} }}}}"
    )));
    extract.output = Some(OutputSpec {
        schema: schema(&[("metadata", "str")]),
    });
    let Some(extract) = synthesize(agent, DirectiveId::Metadata, extract, sample)? else {
        return Ok(Vec::new());
    };
    Ok(vec![rebuilt(sp, prefix, vec![extract, split.clone()])])
}

/// Split → Gather ⇒ Split → Map → Gather: per-chunk headers extracted so
/// the gather can prepend header lineage.
fn header_extraction(
    sp: &SubPipeline,
    agent: &dyn AgentInterface,
    sample: &Dataset,
) -> Result<Vec<SubPipeline>, AgentError> {
    let (prefix, suffix) = split_suffix(sp, 2);
    let (split, gather) = (&suffix[0], &suffix[1]);
    let Some(content_key) = &gather.content_key else {
        return Ok(Vec::new());
    };
    let mut headers = OperationDef::new(format!("{}_headers", gather.name), OperatorKind::Map);
    headers.prompt = Some(TemplateString::new(format!(
        "List the section headers appearing in this document chunk, with their nesting \
         level (1 is the top level):\n{{{{ input.{content_key} }}}}"
    )));
    headers.output = Some(OutputSpec {
        schema: schema(&[("headers", "list[{header: str, level: int}]")]),
    });
    let Some(headers) = synthesize(agent, DirectiveId::HeaderExtraction, headers, sample)? else {
        return Ok(Vec::new());
    };
    let mut gather = gather.clone();
    gather.doc_header_key = Some("headers".to_string());
    Ok(vec![rebuilt(
        sp,
        prefix,
        vec![split.clone(), headers, gather],
    )])
}

/// Gather ⇒ Gather → Filter: drop chunks that cannot contain relevant
/// information before any per-chunk processing.
fn chunk_filtering(
    sp: &SubPipeline,
    agent: &dyn AgentInterface,
    sample: &Dataset,
) -> Result<Vec<SubPipeline>, AgentError> {
    let (prefix, suffix) = split_suffix(sp, 1);
    let gather = &suffix[0];
    let Some(content_key) = &gather.content_key else {
        return Ok(Vec::new());
    };
    let mut filter = OperationDef::new(format!("{}_filter", gather.name), OperatorKind::Filter);
    filter.prompt = Some(TemplateString::new(format!(
        "Could this chunk contain information relevant to the task? Answer with \
         keep_chunk.\n{{{{ input.{content_key}_rendered }}}}"
    )));
    filter.output = Some(OutputSpec {
        schema: schema(&[("keep_chunk", "bool")]),
    });
    let Some(filter) = synthesize(agent, DirectiveId::ChunkFiltering, filter, sample)? else {
        return Ok(Vec::new());
    };
    Ok(vec![rebuilt(sp, prefix, vec![gather.clone(), filter])])
}

/// Gather → Map ⇒ Gather → Map → Unnest: purely structural, no agent.
fn flatten_list(sp: &SubPipeline) -> Vec<SubPipeline> {
    let (prefix, suffix) = split_suffix(sp, 2);
    let (gather, map) = (&suffix[0], &suffix[1]);
    let Some(attr) = map.output_schema().attribute_names().next().map(str::to_string) else {
        return Vec::new();
    };
    let mut unnest = OperationDef::new(format!("{}_flatten", map.name), OperatorKind::Unnest);
    unnest.unnest_key = Some(attr);
    vec![rebuilt(sp, prefix, vec![gather.clone(), map.clone(), unnest])]
}

/// Reduce ⇒ Reduce → Reduce: the agent typically refines the first level
/// to a finer key; the second level combines partial aggregates under the
/// original key.
fn multilevel_reduce(
    sp: &SubPipeline,
    agent: &dyn AgentInterface,
    sample: &Dataset,
) -> Result<Vec<SubPipeline>, AgentError> {
    let (prefix, suffix) = split_suffix(sp, 1);
    let reduce = &suffix[0];
    let mut fine = OperationDef::new(format!("{}_fine", reduce.name), OperatorKind::Reduce);
    fine.reduce_key = reduce.reduce_key.clone();
    fine.prompt = reduce.prompt.clone();
    fine.output = reduce.output.clone();
    let Some(fine) = synthesize(agent, DirectiveId::MultiLevelReduce, fine, sample)? else {
        return Ok(Vec::new());
    };
    let mut coarse = reduce.clone();
    coarse.prompt = Some(TemplateString::new(
        "Combine these partial aggregates for {{ reduce_key }} into one:\n\
         {% for item in inputs %}{{ item }}\n{% endfor %}",
    ));
    let Some(coarse) = synthesize(agent, DirectiveId::MultiLevelReduce, coarse, sample)? else {
        return Ok(Vec::new());
    };
    Ok(vec![rebuilt(sp, prefix, vec![fine, coarse])])
}

/// Attaches a gleaning loop (validator prompt + round budget) to the last
/// operation. Operations already gleaning are left alone.
fn glean(
    d: DirectiveId,
    sp: &SubPipeline,
    agent: &dyn AgentInterface,
    sample: &Dataset,
    params: &RewriteParams,
) -> Result<Vec<SubPipeline>, AgentError> {
    let (prefix, suffix) = split_suffix(sp, 1);
    let op = &suffix[0];
    if op.gleaning.is_some() {
        return Ok(Vec::new());
    }
    let mut refined = op.clone();
    refined.gleaning = Some(GleaningConfig {
        validator_prompt: TemplateString::new(
            "Assess whether this output is complete and accurate for the task:\n{{ output }}",
        ),
        k: params.gleaning_k,
    });
    let Some(refined) = synthesize(agent, d, refined, sample)? else {
        return Ok(Vec::new());
    };
    Ok(vec![rebuilt(sp, prefix, vec![refined])])
}

/// Reduce ⇒ Resolve → Reduce: one resolve per grouping key, consolidating
/// semantically equivalent key values before aggregation.
fn resolve_before_reduce(
    sp: &SubPipeline,
    agent: &dyn AgentInterface,
    sample: &Dataset,
) -> Result<Vec<SubPipeline>, AgentError> {
    let (prefix, suffix) = split_suffix(sp, 1);
    let reduce = &suffix[0];
    let keys: Vec<&String> = reduce
        .reduce_key
        .iter()
        .filter(|k| k.as_str() != GLOBAL_REDUCE_KEY)
        .collect();
    if keys.is_empty() {
        return Ok(Vec::new());
    }
    let mut resolves = Vec::new();
    for key in keys {
        let mut resolve =
            OperationDef::new(format!("{}_resolve_{key}", reduce.name), OperatorKind::Resolve);
        resolve.comparison_prompt = Some(TemplateString::new(format!(
            "Do these two values of '{key}' refer to the same entity?\n\
             First: {{{{ input1.{key} }}}}\nSecond: {{{{ input2.{key} }}}}"
        )));
        resolve.resolution_prompt = Some(TemplateString::new(format!(
            "Choose one canonical value of '{key}' for all of these records:\n\
             {{% for item in inputs %}}{{{{ item.{key} }}}}\n{{% endfor %}}"
        )));
        resolve.output = Some(OutputSpec {
            schema: SchemaSpec::parse_entries([(key.as_str(), "str")]).expect("static schema"),
        });
        let Some(resolve) = synthesize(agent, DirectiveId::ResolveBeforeReduce, resolve, sample)?
        else {
            return Ok(Vec::new());
        };
        resolves.push(resolve);
    }
    resolves.push(reduce.clone());
    Ok(vec![rebuilt(sp, prefix, resolves)])
}

/// Map ⇒ Map → Map: the output schema is partitioned across a two-step
/// chain. Candidates whose composed schema no longer equals the original
/// are excluded.
fn map_chaining(
    sp: &SubPipeline,
    agent: &dyn AgentInterface,
    sample: &Dataset,
) -> Result<Vec<SubPipeline>, AgentError> {
    let (prefix, suffix) = split_suffix(sp, 1);
    let map = &suffix[0];
    let original = map.output_schema();
    if original.entries.len() < 2 {
        return Ok(Vec::new());
    }
    let mut first = original.clone();
    let rest = first.entries.split_off(1);
    let mut map1 = map.clone();
    map1.name = format!("{}_1", map.name);
    map1.output = Some(OutputSpec { schema: first });
    map1.gleaning = None;
    let mut map2 = map.clone();
    map2.name = format!("{}_2", map.name);
    map2.output = Some(OutputSpec {
        schema: SchemaSpec { entries: rest },
    });
    map2.gleaning = None;
    let Some(map1) = synthesize(agent, DirectiveId::MapChaining, map1, sample)? else {
        return Ok(Vec::new());
    };
    let Some(map2) = synthesize(agent, DirectiveId::MapChaining, map2, sample)? else {
        return Ok(Vec::new());
    };
    // Composition check: the chained schemas must union to the original.
    let mut composed = map1.output_schema();
    composed.entries.extend(map2.output_schema().entries);
    let same = composed.entries.len() == original.entries.len()
        && original
            .entries
            .iter()
            .all(|(k, v)| composed.entries.get(k) == Some(v));
    if !same {
        return Ok(Vec::new());
    }
    Ok(vec![rebuilt(sp, prefix, vec![map1, map2])])
}

/// Map ⇒ ParallelMap: one projection per output attribute. The combining
/// step of the pattern degenerates to the attribute merge the parallel
/// map already performs; no LLM reduce is emitted unless the agent
/// supplies one.
fn parallelize_map(
    sp: &SubPipeline,
    agent: &dyn AgentInterface,
    sample: &Dataset,
) -> Result<Vec<SubPipeline>, AgentError> {
    let (prefix, suffix) = split_suffix(sp, 1);
    let map = &suffix[0];
    let original = map.output_schema();
    let Some(prompt) = &map.prompt else {
        return Ok(Vec::new());
    };
    if original.is_empty() {
        return Ok(Vec::new());
    }
    let mut parallel =
        OperationDef::new(format!("{}_parallel", map.name), OperatorKind::ParallelMap);
    parallel.prompts = original
        .entries
        .iter()
        .map(|(name, ty)| ParallelPrompt {
            prompt: prompt.clone(),
            output: OutputSpec {
                schema: SchemaSpec {
                    entries: [(name.clone(), ty.clone())].into_iter().collect(),
                },
            },
        })
        .collect();
    parallel.drop_keys = map.drop_keys.clone();
    let Some(parallel) = synthesize(agent, DirectiveId::ParallelizeMap, parallel, sample)? else {
        return Ok(Vec::new());
    };
    Ok(vec![rebuilt(sp, prefix, vec![parallel])])
}

/// Reduce ⇒ Map → Reduce: condense each document's relevant content
/// before aggregation.
fn pre_aggregation(
    sp: &SubPipeline,
    agent: &dyn AgentInterface,
    sample: &Dataset,
) -> Result<Vec<SubPipeline>, AgentError> {
    let (prefix, suffix) = split_suffix(sp, 1);
    let reduce = &suffix[0];
    let source = reduce
        .prompt
        .as_ref()
        .and_then(|p| first_attr(p, "inputs"))
        .map(|attr| format!("{{{{ input.{attr} }}}}"))
        .unwrap_or_else(|| "{{ input }}".to_string());
    let mut prep = OperationDef::new(format!("{}_prep", reduce.name), OperatorKind::Map);
    prep.prompt = Some(TemplateString::new(format!(
        "Condense the information in this document that is relevant to the aggregation:\n{source}"
    )));
    prep.output = Some(OutputSpec {
        schema: SchemaSpec::parse_entries([(
            format!("{}_relevant", reduce.name).as_str(),
            "str",
        )])
        .expect("static schema"),
    });
    let Some(prep) = synthesize(agent, DirectiveId::PreAggregation, prep, sample)? else {
        return Ok(Vec::new());
    };
    Ok(vec![rebuilt(sp, prefix, vec![prep, reduce.clone()])])
}

/// Equijoin ⇒ Map ∥ Map → Equijoin: per-side projections normalizing the
/// join-relevant fields before pairwise comparison.
fn pre_join_map(
    sp: &SubPipeline,
    agent: &dyn AgentInterface,
    sample: &Dataset,
) -> Result<Vec<SubPipeline>, AgentError> {
    let (prefix, suffix) = split_suffix(sp, 1);
    let join = &suffix[0];
    let Some(comparison) = &join.comparison_prompt else {
        return Ok(Vec::new());
    };
    let mut sides = Vec::new();
    for (side, root) in [("left", "left"), ("right", "right")] {
        let source = first_attr(comparison, root)
            .map(|attr| format!("{{{{ input.{attr} }}}}"))
            .unwrap_or_else(|| "{{ input }}".to_string());
        let mut prep =
            OperationDef::new(format!("{}_{side}_prep", join.name), OperatorKind::Map);
        prep.prompt = Some(TemplateString::new(format!(
            "Normalize the join-relevant fields of this record for matching:\n{source}"
        )));
        prep.output = Some(OutputSpec {
            schema: SchemaSpec::parse_entries([(
                format!("{}_{side}_norm", join.name).as_str(),
                "str",
            )])
            .expect("static schema"),
        });
        let Some(prep) = synthesize(agent, DirectiveId::PreJoinMap, prep, sample)? else {
            return Ok(Vec::new());
        };
        sides.push(prep);
    }
    sides.push(join.clone());
    Ok(vec![rebuilt(sp, prefix, sides)])
}
