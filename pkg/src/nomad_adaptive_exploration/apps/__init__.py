from nomad.config.models.plugins import AppEntryPoint
from nomad.config.models.ui import (
    App,
    Column,
    Dashboard,
    Layout,
    Menu,
    MenuItemHistogram,
    MenuItemTerms,
    MenuItemVisibility,
    SearchQuantities,
    WidgetTerms,
)

SCHEMA = 'nomad_adaptive_exploration.schema_packages.schema_package.ExplorationRun'

Q_VARIANT = f'data.variant#{SCHEMA}'
Q_SEED = f'data.seed#{SCHEMA}'
Q_ENVIRONMENT = f'data.environment#{SCHEMA}'
Q_MODULATION_SET = f'data.modulation_set#{SCHEMA}'
Q_BANDIT = f'data.bandit_kind#{SCHEMA}'
Q_FITNESS = f'data.fitness_kind#{SCHEMA}'
Q_LEARNING = f'data.learning_mode#{SCHEMA}'
Q_FAVOURITE_ARM = f'data.favourite_arm#{SCHEMA}'

Q_OUTCOME = f'data.outcome#{SCHEMA}'
Q_EARLY_OUTCOME = f'data.early_outcome#{SCHEMA}'
Q_FINAL_HORIZON = f'data.final_horizon#{SCHEMA}'
Q_EPISODES = f'data.episodes#{SCHEMA}'
Q_ENV_STEPS = f'data.total_env_steps#{SCHEMA}'


exploration_runs_app = App(
    label='Adaptive Exploration Runs',
    path='adaptive-exploration-runs',
    category='Reinforcement learning',
    description='Compare exploration runs whose behaviour was adapted by a bandit.',
    readme=(
        'Each entry is one seed of one experiment variant, parsed from the '
        'log.csv written by adaptive-exploration. Filter by selector, fitness '
        'signal and modulation set, and compare the final outcome G across '
        'variants.'
    ),
    filters_locked={
        'section_defs.definition_qualified_name': [SCHEMA],
    },
    search_quantities=SearchQuantities(
        include=[
            Q_VARIANT,
            Q_SEED,
            Q_ENVIRONMENT,
            Q_MODULATION_SET,
            Q_BANDIT,
            Q_FITNESS,
            Q_LEARNING,
            Q_FAVOURITE_ARM,
            Q_OUTCOME,
            Q_EARLY_OUTCOME,
            Q_FINAL_HORIZON,
            Q_EPISODES,
            Q_ENV_STEPS,
        ]
    ),
    columns=[
        Column(search_quantity=Q_VARIANT, label='Variant', selected=True),
        Column(search_quantity=Q_SEED, label='Seed', selected=True),
        Column(search_quantity=Q_BANDIT, label='Bandit', selected=True),
        Column(search_quantity=Q_FITNESS, label='Fitness', selected=False),
        Column(search_quantity=Q_OUTCOME, label='G', selected=True),
        Column(search_quantity=Q_EARLY_OUTCOME, label='Early score', selected=False),
        Column(search_quantity=Q_FAVOURITE_ARM, label='Favourite arm', selected=True),
        Column(search_quantity=Q_EPISODES, label='Episodes', selected=False),
    ],
    menu=Menu(
        title='Filters',
        items=[
            Menu(
                title='Experiment',
                items=[
                    MenuItemTerms(
                        search_quantity=Q_VARIANT,
                        title='Variant',
                        show_input=True,
                        options=20,
                    ),
                    MenuItemTerms(
                        search_quantity=Q_ENVIRONMENT,
                        title='Environment',
                        show_input=True,
                        options=10,
                    ),
                    MenuItemTerms(
                        search_quantity=Q_MODULATION_SET,
                        title='Modulation set',
                        show_input=True,
                        options=10,
                    ),
                ],
            ),
            Menu(
                title='Adaptation',
                items=[
                    MenuItemTerms(
                        search_quantity=Q_BANDIT,
                        title='Bandit',
                        options=10,
                    ),
                    MenuItemTerms(
                        search_quantity=Q_FITNESS,
                        title='Fitness',
                        options=10,
                    ),
                    MenuItemTerms(
                        search_quantity=Q_LEARNING,
                        title='Learning mode',
                        options=10,
                    ),
                ],
            ),
            Menu(
                title='Outcomes',
                items=[
                    MenuItemHistogram(
                        title='G',
                        x={'search_quantity': Q_OUTCOME},
                        n_bins=40,
                        autorange=True,
                    ),
                    MenuItemHistogram(
                        title='Final horizon',
                        x={'search_quantity': Q_FINAL_HORIZON},
                        n_bins=40,
                        autorange=True,
                    ),
                    MenuItemVisibility(title='Visibility'),
                ],
            ),
        ],
    ),
    dashboard=Dashboard(
        widgets=[
            WidgetTerms(
                title='Variant',
                search_quantity=Q_VARIANT,
                layout={
                    'md': Layout(w=6, h=4, x=0, y=0, minW=3, minH=3),
                    'lg': Layout(w=6, h=4, x=0, y=0, minW=3, minH=3),
                },
            ),
            WidgetTerms(
                title='Favourite arm',
                search_quantity=Q_FAVOURITE_ARM,
                layout={
                    'md': Layout(w=6, h=4, x=6, y=0, minW=3, minH=3),
                    'lg': Layout(w=6, h=4, x=6, y=0, minW=3, minH=3),
                },
            ),
            WidgetTerms(
                title='Bandit',
                search_quantity=Q_BANDIT,
                layout={
                    'md': Layout(w=6, h=4, x=0, y=4, minW=3, minH=3),
                    'lg': Layout(w=6, h=4, x=0, y=4, minW=3, minH=3),
                },
            ),
            WidgetTerms(
                title='Modulation set',
                search_quantity=Q_MODULATION_SET,
                layout={
                    'md': Layout(w=6, h=4, x=6, y=4, minW=3, minH=3),
                    'lg': Layout(w=6, h=4, x=6, y=4, minW=3, minH=3),
                },
            ),
        ],
    ),
)


exploration_runs_app_entry_point = AppEntryPoint(
    name='exploration_runs_app',
    description='App for comparing runs stored with the ExplorationRun schema.',
    app=exploration_runs_app,
)

app_entry_point = exploration_runs_app_entry_point
