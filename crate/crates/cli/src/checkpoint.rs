//! Model checkpoints: a single binary container with a version tag, the
//! textual configuration block and named little-endian f64 weight arrays.
//! Load is bit-exact with respect to save.

use std::fs;
use std::path::Path;

use wavespk_core::model::{
    DropoutChoice, EncoderConfig, FrontendChoice, Model, ModelState,
};

use crate::CliError;

const MAGIC: &[u8; 8] = b"WSPKCKP1";

fn dropout_tag(d: DropoutChoice) -> String {
    match d {
        DropoutChoice::None => "none".into(),
        DropoutChoice::Bernoulli(p) => format!("bd:{p}"),
        DropoutChoice::Gaussian(a) => format!("gd:{a}"),
        DropoutChoice::Variational => "vd".into(),
    }
}

fn parse_dropout(tag: &str) -> Result<DropoutChoice, CliError> {
    if tag == "none" {
        return Ok(DropoutChoice::None);
    }
    if tag == "vd" {
        return Ok(DropoutChoice::Variational);
    }
    if let Some(p) = tag.strip_prefix("bd:") {
        return Ok(DropoutChoice::Bernoulli(p.parse().map_err(|_| {
            CliError::Data(format!("bad bernoulli dropout tag '{tag}'"))
        })?));
    }
    if let Some(a) = tag.strip_prefix("gd:") {
        return Ok(DropoutChoice::Gaussian(a.parse().map_err(|_| {
            CliError::Data(format!("bad gaussian dropout tag '{tag}'"))
        })?));
    }
    Err(CliError::Data(format!("unknown dropout tag '{tag}'")))
}

fn config_block(state: &ModelState) -> String {
    let join = |v: &[usize]| {
        v.iter()
            .map(|x| x.to_string())
            .collect::<Vec<_>>()
            .join(",")
    };
    let c = &state.cfg;
    format!(
        "version=1\nfront_end={}\nanalytic={}\ndropout={}\nn_filters={}\nfilter_len={}\n\
         frontend_stride={}\nn_blocks={}\ndecimation={}\nchannels={}\ntdnn_channels={}\n\
         tdnn_kernel={}\ntdnn_dilations={}\nembedding_dim={}\nn_speakers={}\nsample_rate={}\n",
        match state.frontend {
            FrontendChoice::Mel => "mel",
            FrontendChoice::Tdf => "tdf",
            FrontendChoice::Sinc => "sinc",
        },
        state.analytic,
        dropout_tag(state.dropout),
        c.n_filters,
        c.filter_len,
        c.frontend_stride,
        c.n_blocks,
        c.decimation,
        join(&c.channels),
        join(&c.tdnn_channels),
        c.tdnn_kernel,
        join(&c.tdnn_dilations),
        c.embedding_dim,
        c.n_speakers,
        c.sample_rate,
    )
}

fn parse_config_block(text: &str) -> Result<(FrontendChoice, bool, DropoutChoice, EncoderConfig), CliError> {
    let mut kv = std::collections::HashMap::new();
    for line in text.lines() {
        if let Some((k, v)) = line.split_once('=') {
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    let get = |key: &str| -> Result<String, CliError> {
        kv.get(key)
            .cloned()
            .ok_or_else(|| CliError::Data(format!("checkpoint config missing '{key}'")))
    };
    if get("version")? != "1" {
        return Err(CliError::Data("unsupported checkpoint version".into()));
    }
    let parse_usize = |key: &str| -> Result<usize, CliError> {
        get(key)?
            .parse()
            .map_err(|_| CliError::Data(format!("bad integer for '{key}'")))
    };
    let parse_list = |key: &str| -> Result<Vec<usize>, CliError> {
        get(key)?
            .split(',')
            .map(|v| v.parse())
            .collect::<Result<_, _>>()
            .map_err(|_| CliError::Data(format!("bad integer list for '{key}'")))
    };
    let frontend = match get("front_end")?.as_str() {
        "mel" => FrontendChoice::Mel,
        "tdf" => FrontendChoice::Tdf,
        "sinc" => FrontendChoice::Sinc,
        other => return Err(CliError::Data(format!("unknown front end '{other}'"))),
    };
    let analytic = get("analytic")? == "true";
    let dropout = parse_dropout(&get("dropout")?)?;
    let cfg = EncoderConfig {
        n_filters: parse_usize("n_filters")?,
        filter_len: parse_usize("filter_len")?,
        frontend_stride: parse_usize("frontend_stride")?,
        n_blocks: parse_usize("n_blocks")?,
        decimation: parse_usize("decimation")?,
        channels: parse_list("channels")?,
        tdnn_channels: parse_list("tdnn_channels")?,
        tdnn_kernel: parse_usize("tdnn_kernel")?,
        tdnn_dilations: parse_list("tdnn_dilations")?,
        embedding_dim: parse_usize("embedding_dim")?,
        n_speakers: parse_usize("n_speakers")?,
        sample_rate: parse_usize("sample_rate")? as u32,
    };
    Ok((frontend, analytic, dropout, cfg))
}

pub fn save_model(path: &Path, model: &Model) -> Result<(), CliError> {
    let state = model.state();
    let config = config_block(&state);
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(config.as_bytes());
    out.extend_from_slice(&(state.params.len() as u32).to_le_bytes());
    for (name, shape, data) in &state.params {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, out).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn load_model(path: &Path) -> Result<Model, CliError> {
    let bytes =
        fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let fail = |msg: &str| CliError::Data(format!("{}: {msg}", path.display()));
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8], CliError> {
        if *pos + n > bytes.len() {
            return Err(fail("truncated checkpoint"));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    if take(&mut pos, 8)? != MAGIC {
        return Err(fail("not a model checkpoint"));
    }
    let config_len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    let config_text = std::str::from_utf8(take(&mut pos, config_len)?)
        .map_err(|_| fail("config block is not UTF-8"))?
        .to_string();
    let (frontend, analytic, dropout, cfg) = parse_config_block(&config_text)?;
    let n_params = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    let mut params = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        let name_len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(take(&mut pos, name_len)?)
            .map_err(|_| fail("parameter name is not UTF-8"))?
            .to_string();
        let ndim = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = take(&mut pos, numel * 8)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.push((name, shape, data));
    }
    let state = ModelState {
        frontend,
        analytic,
        dropout,
        cfg,
        params,
    };
    Model::from_state(&state).map_err(CliError::data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use wavespk_core::model::build_model;

    #[test]
    fn save_load_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = build_model(
            EncoderConfig::tiny(3),
            FrontendChoice::Tdf,
            true,
            DropoutChoice::Variational,
            42,
        )
        .unwrap();
        save_model(&path, &model).unwrap();
        let back = load_model(&path).unwrap();
        for ((na, ta), (nb, tb)) in model
            .named_params()
            .iter()
            .zip(back.named_params().iter())
        {
            assert_eq!(na, nb);
            assert_eq!(ta.data(), tb.data(), "param {na} not bit-exact");
        }
        assert_eq!(back.analytic, true);
        assert_eq!(back.dropout, DropoutChoice::Variational);

        // Saving the loaded model reproduces the file byte for byte.
        let path2 = dir.path().join("model2.ckpt");
        save_model(&path2, &back).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn rejects_non_checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk");
        fs::write(&path, b"definitely not a checkpoint").unwrap();
        assert!(load_model(&path).is_err());
    }
}
