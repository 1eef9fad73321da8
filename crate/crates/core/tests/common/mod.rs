use corpusprep::corpus::DropReason;

pub const COLUMNS: &str = "src_lang,tgt_lang,src,tgt,laser_score,src_lang_score,tgt_lang_score";

/// Hand-picked pairs whose sides are not MDL-noisy at the default
/// parameters; the golden test re-checks this.
pub const CLEAN: [(&str, &str); 15] = [
    ("We ate dinner on the balcony last night.", "Hier soir, on a mangé sur le balcon."),
    ("The museum is closed on public holidays.", "Le musée est fermé les jours fériés."),
    ("Her new book comes out in March.", "Son nouveau livre sort en mars."),
    ("I lost my umbrella on the bus.", "J'ai perdu mon parapluie dans le bus."),
    ("He speaks three languages fluently.", "Il parle couramment trois langues."),
    ("The concert ended with a quiet song.", "Le concert s'est terminé par une chanson douce."),
    ("Farmers hope for rain next week.", "Les agriculteurs espèrent de la pluie."),
    ("The soup lacks a bit of pepper.", "La soupe manque un peu de poivre."),
    ("The baker sold warm rolls at dawn.", "Le boulanger vendait des petits pains chauds à l'aube."),
    ("A doctor visited my uncle at home.", "Un médecin a rendu visite à mon oncle chez lui."),
    ("Birds sang loudly in the morning.", "Les oiseaux chantaient fort le matin."),
    ("Public buses run until midnight.", "Les bus publics roulent jusqu'à minuit."),
    ("The mayor opened a new library.", "Le maire a inauguré une nouvelle bibliothèque."),
    ("My aunt bought a blue umbrella.", "Ma tante a acheté un parapluie bleu."),
    ("The pilot landed during a storm.", "Le pilote a atterri pendant un orage."),
];

pub fn row(src: &str, tgt: &str, laser: &str, src_ls: &str) -> String {
    format!("eng\tfra\t{src}\t{tgt}\t{laser}\t{src_ls}\t0.99")
}

/// 30 lines; each of the 13 drop reasons fires exactly once.
pub fn golden() -> (Vec<String>, Vec<Option<DropReason>>) {
    let long = "ab".repeat(60);
    let first = ("The committee met on Monday to review the budget.", "Le comité s'est réuni lundi pour examiner le budget.");
    let mut lines = Vec::new();
    let mut expect = Vec::new();
    let mut push = |line: String, reason: Option<DropReason>| {
        lines.push(line);
        expect.push(reason);
    };
    push(row(first.0, first.1, "1.2", "0.99"), None);
    push(row(first.0, first.1, "1.2", "0.99"), Some(DropReason::Duplicate));
    push(row("Thank you.", "Merci beaucoup.", "1.2", "0.99"), Some(DropReason::TooShort));
    push(
        row("The bridge was opened in 1998 after years of work.", "Le pont a été ouvert en 1999 après des années de travaux.", "1.2", "0.99"),
        Some(DropReason::NumberMismatch),
    );
    push(
        row("Are you coming to the meeting tomorrow morning?", "Vous venez à la réunion demain matin.", "1.2", "0.99"),
        Some(DropReason::PunctMismatch),
    );
    push(
        row("Please visit https://example.org for more details.", "Veuillez consulter https://example.org pour plus de détails.", "1.2", "0.99"),
        Some(DropReason::UrlOrEmail),
    );
    push(
        row(&format!("The identifier is {long} in the log."), &format!("L'identifiant est {long} dans le journal."), "1.2", "0.99"),
        Some(DropReason::LongWord),
    );
    push(
        row("You should write if (x == 1) return early in that case.", "Vous devriez écrire if (x == 1) return dans ce cas.", "1.2", "0.99"),
        Some(DropReason::CodeLike),
    );
    push(
        row("ha ha ha ha ha ha ha ha ha ha ha ha ha ha ha ha", "Il a beaucoup ri pendant toute la soirée.", "1.2", "0.99"),
        Some(DropReason::MdlNoisy),
    );
    push(
        row("The river flooded a quiet village.", "La crue a envahi un village calme.", "1.2", "0.30"),
        Some(DropReason::LangIdFail),
    );
    push(
        row("The new school has a large garden behind it.", "La nouvelle école a un grand jardin derrière.", "1.2", "0.90"),
        Some(DropReason::LangScoreBelowThreshold),
    );
    push(
        row("Many tourists visit the old castle in summer.", "Beaucoup de touristes visitent le vieux château en été.", "1.00", "0.99"),
        Some(DropReason::LaserBelowThreshold),
    );
    push(row(first.0, "Le comité a discuté du budget lundi matin.", "1.2", "0.99"), Some(DropReason::InconsistentTranslation));
    push("this line has no tabs at all".to_string(), Some(DropReason::MalformedLine));
    push(
        row("The results (see appendix) were better than expected.", "Les résultats étaient meilleurs que prévu.", "1.2", ""),
        None,
    );
    for (s, t) in CLEAN {
        push(row(s, t, "1.2", "0.99"), None);
    }
    (lines, expect)
}
